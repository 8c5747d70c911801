"""Matrix Market reading and writing of dH pencils.

``E`` and ``R`` are written with the ``symmetric`` qualifier and ``J`` with
``skew-symmetric``; entries use 17 significant digits so that a write/read
round trip is exact. A pencil can also be stored as one bundled file holding
``[E J R]`` side by side (``n x 3n``, general).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from .errors import InputError
from .pencil import DHPencil

PRECISION = 17


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        M = scipy.io.mmread(str(path))
    except (ValueError, OSError) as exc:
        raise InputError(f"cannot parse {path} as Matrix Market: {exc}") from exc
    if scipy.sparse.issparse(M):
        M = M.toarray()
    M = np.asarray(M)
    if np.iscomplexobj(M):
        raise InputError(f"{path}: complex entries are not supported")
    return M.astype(float)


def write_matrix(path, M, symmetry: str = "general", comment: str = "") -> None:
    scipy.io.mmwrite(str(path), np.asarray(M, dtype=float), comment=comment,
                     field="real", precision=PRECISION, symmetry=symmetry)


def read_pencil(E_path, J_path=None, R_path=None) -> DHPencil:
    """Read a pencil from three files, or from one bundled ``n x 3n`` file
    when only ``E_path`` is given."""
    if J_path is None and R_path is None:
        B = read_matrix(E_path)
        n = B.shape[0]
        if B.shape[1] != 3 * n:
            raise InputError(f"bundled pencil must be n x 3n, got {B.shape}")
        return DHPencil(B[:, :n], B[:, n:2 * n], B[:, 2 * n:])
    if J_path is None or R_path is None:
        raise InputError("give either one bundled file or all of E, J, R")
    return DHPencil(read_matrix(E_path), read_matrix(J_path), read_matrix(R_path))


def write_pencil(p: DHPencil, prefix) -> tuple[Path, Path, Path]:
    """Write ``<prefix>_E.mtx``, ``<prefix>_J.mtx`` and ``<prefix>_R.mtx``."""
    prefix = Path(prefix)
    paths = tuple(prefix.parent / f"{prefix.name}_{k}.mtx" for k in "EJR")
    write_matrix(paths[0], p.E, "symmetric")
    write_matrix(paths[1], p.J, "skew-symmetric")
    write_matrix(paths[2], p.R, "symmetric")
    return paths


def write_bundled(p: DHPencil, path) -> Path:
    write_matrix(path, np.hstack([p.E, p.J, p.R]))
    return Path(path)
