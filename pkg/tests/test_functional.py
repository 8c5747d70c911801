import numpy as np
import pytest

from dhdist.errors import InputError
from dhdist.functional import (
    PerturbationTriple,
    Variant,
    assemble_gradient,
    eval_F,
    eval_F_odd,
    extract_eigendata,
    misalignment,
    plane_misalignment,
)
from dhdist.linalg import frobenius_inner, skew_part, sym_part
from dhdist.pencil import Target, gen_random_dh

from .conftest import random_skew, random_sym


def random_triple(rng, n, frozen=False):
    G = None if frozen else random_skew(rng, n)
    return PerturbationTriple(random_sym(rng, n), random_sym(rng, n), G)


def tangent(rng, pert):
    D = random_triple(rng, pert.Delta.shape[0], pert.Gamma is None)
    c = frobenius_inner(D.blocks(), pert.blocks())
    return D.axpy(-c, pert)


def fd_relative_error(p, pert, D, eps, variant, target, h=1e-6):
    def F(P):
        return eval_F(p, P, eps, extract_eigendata(p, P, eps, target=target), variant)

    fd = (F(pert.axpy(h, D)) - F(pert.axpy(-h, D))) / (2 * h)
    g = assemble_gradient(p, pert, eps, extract_eigendata(p, pert, eps, target=target), variant)
    an = eps * frobenius_inner(g.as_triple().blocks(), D.blocks())
    return abs(fd - an) / max(abs(an), 1e-14)


class TestTriple:
    def test_normalized_and_axpy_keep_structure(self, rng):
        t = random_triple(rng, 4).normalized()
        assert t.norm() == pytest.approx(1.0, abs=1e-14)
        s = t.axpy(0.3, random_triple(rng, 4))
        np.testing.assert_array_equal(s.Delta, s.Delta.T)
        np.testing.assert_array_equal(s.Gamma, -s.Gamma.T)

    def test_zero_cannot_be_normalized(self):
        with pytest.raises(InputError):
            PerturbationTriple.zeros(3).normalized()

    def test_frozen_gamma_is_kept(self, rng):
        t = random_triple(rng, 3, frozen=True)
        assert t.axpy(1.0, t).Gamma is None and t.scaled(2.0).Gamma is None

    def test_variant_choice(self):
        assert Variant.for_pencil(5) is Variant.ODD
        assert Variant.for_pencil(6) is Variant.EVEN
        assert Variant.for_pencil(6, "unified") is Variant.UNIFIED


class TestMisalignment:
    def test_matches_naive_formula(self, rng):
        x, v = (w / np.linalg.norm(w) for w in rng.standard_normal((2, 6)))
        assert misalignment(x, v) == pytest.approx(1 - (x @ v) ** 2, rel=1e-12)

    def test_no_cancellation_near_alignment(self):
        x = np.array([1.0, 0.0])
        v = np.array([np.cos(1e-9), np.sin(1e-9)])
        assert misalignment(x, v) == pytest.approx(1e-18, rel=1e-6)

    def test_plane(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        w = (q[:, 0] + 1j * q[:, 1]) / np.sqrt(2)
        x = rng.standard_normal(5)
        x /= np.linalg.norm(x)
        naive = 1 - 2 * (x @ w.real) ** 2 - 2 * (x @ w.imag) ** 2
        assert plane_misalignment(x, w) == pytest.approx(naive, rel=1e-12)


class TestEigenData:
    def test_odd_pencil_has_real_null_vector_of_J(self, example_pencil):
        d = extract_eigendata(example_pencil, PerturbationTriple.zeros(5), 0.0)
        assert np.linalg.norm(example_pencil.J @ d.w) < 1e-12
        assert d.mu == 0.0
        assert d.lam == pytest.approx(np.linalg.eigvalsh(example_pencil.E)[0])

    def test_instability_target_has_no_w(self, example_pencil):
        d = extract_eigendata(example_pencil, PerturbationTriple.zeros(5, True), 0.0, target="inst")
        assert d.w is None

    def test_negative_eps_rejected(self, example_pencil):
        with pytest.raises(InputError):
            extract_eigendata(example_pencil, PerturbationTriple.zeros(5), -1.0)

    def test_sign_follows_previous(self, example_pencil, rng):
        t = random_triple(rng, 5).normalized()
        d0 = extract_eigendata(example_pencil, t, 0.1)
        d1 = extract_eigendata(example_pencil, t.axpy(1e-4, random_triple(rng, 5)), 0.1, prev=d0)
        assert d1.x @ d0.x > 0 and d1.u @ d0.u > 0 and d1.w @ d0.w > 0


class TestFunctionalValues:
    def test_printed_example_initial_value(self, example_pencil):
        d = extract_eigendata(example_pencil, PerturbationTriple.zeros(5), 0.0)
        assert eval_F_odd(d) == pytest.approx(0.9181, abs=1e-3)

    def test_zero_at_common_kernel(self):
        E = np.diag([0.0, 1.0, 2.0])
        R = np.diag([0.0, 3.0, 1.0])
        J = np.zeros((3, 3))
        J[1, 2], J[2, 1] = 1.0, -1.0
        from dhdist.pencil import DHPencil

        p = DHPencil(E, J, R)
        z = PerturbationTriple.zeros(3)
        for v in (Variant.ODD, Variant.UNIFIED):
            assert eval_F(p, z, 0.0, extract_eigendata(p, z, 0.0), v) == pytest.approx(0.0, abs=1e-28)


CASES = [
    (Variant.ODD, 5, Target.SINGULARITY),
    (Variant.ODD, 5, Target.INSTABILITY),
    (Variant.EVEN, 6, Target.SINGULARITY),
    (Variant.EVEN, 4, Target.INSTABILITY),
    (Variant.UNIFIED, 5, Target.SINGULARITY),
    (Variant.UNIFIED, 6, Target.SINGULARITY),
    (Variant.UNIFIED, 6, Target.INSTABILITY),
]


class TestGradients:
    @pytest.mark.parametrize("variant,n,target", CASES)
    def test_central_differences(self, variant, n, target):
        rng = np.random.default_rng(hash((variant.value, n, target.value)) % 2**32)
        for k in range(10):
            p = gen_random_dh(n, seed=k)
            pert = random_triple(rng, n, target is Target.INSTABILITY).normalized()
            D = tangent(rng, pert)
            assert fd_relative_error(p, pert, D, 0.3, variant, target) < 1e-5

    def test_rho_is_the_radial_component(self, example_pencil, rng):
        pert = random_triple(rng, 5).normalized()
        d = extract_eigendata(example_pencil, pert, 0.2)
        g = assemble_gradient(example_pencil, pert, 0.2, d, Variant.ODD)
        assert g.rho == pytest.approx(frobenius_inner(g.as_triple().blocks(), pert.blocks()))

    def test_gradient_blocks_are_structured(self, example_pencil, rng):
        pert = random_triple(rng, 5).normalized()
        g = assemble_gradient(example_pencil, pert, 0.2, extract_eigendata(example_pencil, pert, 0.2), Variant.ODD)
        np.testing.assert_array_equal(g.G_E, sym_part(g.G_E))
        np.testing.assert_array_equal(g.G_J, skew_part(g.G_J))
