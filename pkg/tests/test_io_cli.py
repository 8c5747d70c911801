import json
import subprocess
import sys

import numpy as np
import pytest

from dhdist.cli import main
from dhdist.errors import InputError
from dhdist.io import read_matrix, read_pencil, write_bundled, write_pencil
from dhdist.pencil import DHPencil, gen_random_dh


def singular_pencil():
    E = np.diag([0.0, 1.0, 2.0])
    R = np.diag([0.0, 1.0, 0.5])
    J = np.zeros((3, 3))
    J[1, 2], J[2, 1] = 1.0, -1.0
    return DHPencil(E, J, R)


class TestMatrixMarket:
    def test_round_trip_is_exact(self, tmp_path):
        p = gen_random_dh(6, 3)
        paths = write_pencil(p, tmp_path / "p")
        q = read_pencil(*paths)
        for a, b in zip((p.E, p.J, p.R), (q.E, q.J, q.R)):
            np.testing.assert_array_equal(a, b)

    def test_bundled_round_trip(self, tmp_path):
        p = gen_random_dh(4, 1)
        q = read_pencil(write_bundled(p, tmp_path / "b.mtx"))
        np.testing.assert_array_equal(p.J, q.J)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            read_matrix(tmp_path / "nope.mtx")

    def test_garbage(self, tmp_path):
        f = tmp_path / "bad.mtx"
        f.write_text("not a matrix\n")
        with pytest.raises(InputError):
            read_matrix(f)

    def test_bundled_shape(self, tmp_path):
        from dhdist.io import write_matrix
        write_matrix(tmp_path / "w.mtx", np.ones((3, 4)))
        with pytest.raises(InputError):
            read_pencil(tmp_path / "w.mtx")

    def test_partial_triple(self, tmp_path):
        paths = write_pencil(gen_random_dh(3, 0), tmp_path / "p")
        with pytest.raises(InputError):
            read_pencil(paths[0], paths[1])


class TestCLI:
    @pytest.fixture
    def files(self, tmp_path):
        return [str(x) for x in write_pencil(gen_random_dh(3, 0), tmp_path / "p")]

    def test_validate(self, files, tmp_path, capsys):
        E, J, R = files
        assert main(["validate", "--E", E, "--J", J, "--R", R]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["is_regular"] is True

    def test_bounds(self, files, capsys):
        E, J, R = files
        assert main(["bounds", "--E", E, "--J", J, "--R", R]) == 0
        doc = json.loads(capsys.readouterr().out)
        lo, up = doc["singularity"]
        assert up == pytest.approx(np.sqrt(2) * lo)

    def test_distance_singular(self, tmp_path, capsys):
        paths = [str(x) for x in write_pencil(singular_pencil(), tmp_path / "s")]
        out = tmp_path / "r.json"
        curve = tmp_path / "c.csv"
        rc = main(["distance", "--E", paths[0], "--J", paths[1], "--R", paths[2],
                   "--json", str(out), "--curve-csv", str(curve)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["eps_star"] == 0.0 and "timestamp" in doc and doc["run"]["tol"] == 1e-8
        assert curve.read_text().startswith("epsilon,f_value")

    def test_curve(self, files, capsys):
        E, J, R = files
        rc = main(["curve", "--E", E, "--J", J, "--R", R, "--eps-min", "0", "--eps-max", "0.2",
                   "--steps", "3", "--restarts", "0", "--max-steps", "20"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "epsilon,f_value" and len(lines) == 4

    def test_empty_grid_is_usage_error(self, files, capsys):
        E, J, R = files
        rc = main(["curve", "--E", E, "--J", J, "--R", R, "--eps-min", "0", "--eps-max", "1",
                   "--steps", "0"])
        assert rc == 2

    def test_missing_input_is_usage_error(self, capsys):
        assert main(["bounds"]) == 2

    def test_unreadable_file(self, tmp_path, capsys):
        rc = main(["bounds", "--pencil", str(tmp_path / "none.mtx")])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_generate_msd(self, tmp_path, capsys):
        assert main(["generate", "msd", "--N", "100", "--out", str(tmp_path / "m")]) == 0
        p = read_pencil(tmp_path / "m_E.mtx", tmp_path / "m_J.mtx", tmp_path / "m_R.mtx")
        assert p.n == 301

    def test_generate_random_bundle(self, tmp_path, capsys):
        out = tmp_path / "r.mtx"
        assert main(["generate", "random", "--n", "4", "--seed", "2", "--bundle", "--out", str(out)]) == 0
        np.testing.assert_array_equal(read_pencil(out).E, gen_random_dh(4, 2).E)

    def test_numerical_failure_exit_code(self, files, capsys):
        E, J, R = files
        # an upper end below the distance and no room to expand it
        rc = main(["distance", "--E", E, "--J", J, "--R", R, "--eps-lb", "0.01",
                   "--eps-ub", "0.02", "--max-expand", "0", "--restarts", "0"])
        assert rc == 1
        assert "numerical failure" in capsys.readouterr().err

    def test_entry_point_help(self):
        out = subprocess.run([sys.executable, "-m", "dhdist.cli", "--help"],
                             capture_output=True, text=True)
        assert out.returncode == 0 and "distance" in out.stdout
