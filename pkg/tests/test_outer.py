import csv
import json

import numpy as np
import pytest

from dhdist.errors import InputError
from dhdist.outer import (
    OuterConfig,
    bisection_distance,
    f_curve,
    f_of_eps,
    upper_bracket_start,
    write_curve_csv,
    write_result_json,
)
from dhdist.pencil import (
    DHPencil,
    Target,
    common_kernel_matrix,
    direct_formula_minimize,
    distance_bounds,
    gen_random_dh,
)
from dhdist.linalg import sym_eig_smallest


def singular_pencil():
    E = np.diag([0.0, 1.0, 2.0])
    R = np.diag([0.0, 1.0, 0.5])
    J = np.zeros((3, 3))
    J[1, 2], J[2, 1] = 1.0, -1.0
    return DHPencil(E, J, R)


class TestConfig:
    def test_bad_method(self):
        with pytest.raises(InputError):
            OuterConfig(method="lowrank")

    def test_bad_tolerance(self):
        with pytest.raises(InputError):
            OuterConfig(tol=0.0)

    def test_f_stop_follows_tol(self):
        cfg = OuterConfig(tol=1e-6).flow_config(0.2, 5)
        assert cfg.f_stop == pytest.approx(1e-8)


class TestSingular:
    def test_distance_zero(self):
        r = bisection_distance(singular_pencil())
        assert r.eps_star == 0.0 and r.converged
        np.testing.assert_allclose(np.abs(r.null_vector), [1.0, 0.0, 0.0], atol=1e-12)
        assert max(r.residuals.values()) < 1e-12


class TestUpperBracketStart:
    @pytest.mark.parametrize("rank2", [False, True])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_is_a_root(self, seed, rank2):
        p = gen_random_dh(5, seed)
        _, up = distance_bounds(p, Target.SINGULARITY)
        _, v, _ = sym_eig_smallest(common_kernel_matrix(p))
        start = upper_bracket_start(p, v, up, rank2=rank2)
        cfg = OuterConfig(method="rank2" if rank2 else "full", flow={"max_steps": 0})
        f, _ = f_of_eps(p, up, start, cfg)
        # the rank-2 start carries a tiny tilt along uu^T
        assert f < (1e-10 if rank2 else 1e-20)
        if rank2:
            for M in start.blocks():
                assert np.linalg.matrix_rank(M, tol=1e-10) <= 2

    def test_below_own_norm_is_plain_construction(self):
        p = gen_random_dh(3, 0)
        _, v, _ = sym_eig_smallest(common_kernel_matrix(p))
        a = upper_bracket_start(p, v, 1e-3)
        b = upper_bracket_start(p, v, 2e-3)
        for x, y in zip(a.blocks(), b.blocks()):
            np.testing.assert_allclose(x, y)


class TestBisection:
    def test_tight_bracket_matches_oracle(self):
        p = gen_random_dh(3, 0)
        d, _ = direct_formula_minimize(p)
        cfg = OuterConfig(eps_lb=0.95, eps_ub=0.96, tol_eps=1e-4, restarts=0,
                          flow={"max_steps": 4000})
        r = bisection_distance(p, cfg)
        assert r.bracket[0] <= r.eps_star <= r.bracket[1]
        assert r.eps_star == pytest.approx(d, rel=2e-3)
        assert max(r.residuals.values()) < 1e-2

    def test_bad_user_bracket(self):
        with pytest.raises(InputError):
            bisection_distance(gen_random_dh(3, 0), OuterConfig(eps_lb=1.0, eps_ub=0.5))


class TestCurve:
    def test_grid_order_and_rejects_decreasing(self):
        p = gen_random_dh(3, 0)
        cfg = OuterConfig(restarts=0, flow={"max_steps": 50})
        out = f_curve(p, [0.0, 0.2, 0.4], cfg)
        assert [e for e, _ in out] == [0.0, 0.2, 0.4]
        with pytest.raises(InputError):
            f_curve(p, [0.4, 0.2], cfg)


class TestOutputs:
    def test_json_and_csv(self, tmp_path):
        r = bisection_distance(singular_pencil())
        path = tmp_path / "r.json"
        write_result_json(r, path)
        doc = json.loads(path.read_text())
        assert doc["schema"] == "dh-distance/1"
        assert doc["eps_star"] == 0.0 and doc["target"] == "sing"
        assert np.array(doc["perturbation"]["J"]).shape == (3, 3)
        cpath = tmp_path / "c.csv"
        write_curve_csv([(0.1, 0.5), (0.2, 0.0)], cpath)
        rows = list(csv.reader(cpath.open()))
        assert rows[0] == ["epsilon", "f_value"] and len(rows) == 3
