"""Dense linear-algebra kernels shared by the flows.

Everything here is a pure function of its inputs. Eigenvectors are returned
under fixed sign/phase conventions so that flows and regression tests are
reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import EvenDimension, OddDimension

RANK_TOL = 1e-10
SIGN_TOL = 1e-10


def sym_part(X):
    """Return ``(X + X^T) / 2``."""
    X = np.asarray(X)
    return 0.5 * (X + X.T)


def skew_part(X):
    """Return ``(X - X^T) / 2``."""
    X = np.asarray(X)
    return 0.5 * (X - X.T)


def frobenius_inner(Xs, Ys) -> float:
    """Real Frobenius inner product summed over two equally long matrix tuples.

    Single arrays are accepted as one-element tuples. ``None`` entries (frozen
    blocks) contribute nothing.
    """
    if isinstance(Xs, np.ndarray):
        Xs, Ys = (Xs,), (Ys,)
    total = 0.0
    for X, Y in zip(Xs, Ys):
        if X is None or Y is None:
            continue
        total += float(np.real(np.vdot(Y, X)))
    return total


def fix_sign(v, tol: float = SIGN_TOL):
    """Flip ``v`` so that its first entry with magnitude above ``tol`` is positive."""
    idx = np.flatnonzero(np.abs(v) > tol)
    if idx.size and v[idx[0]] < 0:
        return -v
    return v


def sym_eig_smallest(A):
    """Smallest eigenpair of a symmetric matrix.

    Returns
    -------
    value : float
        Algebraically smallest eigenvalue.
    vector : ndarray
        Unit eigenvector, first significant entry positive.
    gap : float
        Distance to the next eigenvalue (0 for n == 1 or ties).
    """
    vals, vecs = np.linalg.eigh(sym_part(A))
    gap = float(vals[1] - vals[0]) if vals.size > 1 else 0.0
    return float(vals[0]), fix_sign(vecs[:, 0]), gap


def skew_null_vector(B):
    """Real unit null vector of an odd-dimensional skew-symmetric matrix.

    The right singular vector of the smallest singular value is returned,
    which is deterministic when the null space is larger than one. The zero
    matrix yields ``e_1``.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if n % 2 == 0:
        raise EvenDimension(f"skew null vector requires odd dimension, got n={n}")
    if not np.any(B):
        w = np.zeros(n)
        w[0] = 1.0
        return w
    _, _, vt = np.linalg.svd(B)
    return fix_sign(vt[-1].copy())


def skew_eigh(B):
    """Eigen-decomposition of a real skew matrix through the Hermitian ``-iB``.

    Returns ``(sigma, V)`` with ``B = V diag(i sigma) V^H`` and ``sigma``
    ascending.
    """
    return np.linalg.eigh(-1j * np.asarray(B, dtype=float))


def _pair_subspace(B, sigma, V):
    """Orthonormal real basis (q1, q2) of the invariant plane of the +-i mu pair
    closest to zero, oriented so that ``q1^T B q2 >= 0``."""
    n = B.shape[0]
    k = n // 2
    Y = V[:, k - 1:k + 1]
    Q, _, _ = np.linalg.svd(np.hstack([Y.real, Y.imag]), full_matrices=False)
    q1, q2 = Q[:, 0], Q[:, 1]
    if q1 @ B @ q2 < 0:
        q2 = -q2
    return q1, q2


def skew_smallest_imag_pair(B):
    """Eigenvalue ``i mu`` (mu >= 0) of a real even-dimensional skew matrix with
    the smallest nonnegative imaginary part, and its eigenvector.

    The eigenvector ``w`` has unit norm, ``Re(w) ⟂ Im(w)`` and
    ``|Re(w)| = |Im(w)| = 1/sqrt(2)``. Its phase is fixed so that the first
    significant entry of ``w`` is real and positive.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if n % 2 == 1:
        raise OddDimension(f"imaginary pair requires even dimension, got n={n}")
    sigma, V = skew_eigh(B)
    q1, q2 = _pair_subspace(B, sigma, V)
    mu = max(float(q1 @ B @ q2), 0.0)
    w = (q1 + 1j * q2) / np.sqrt(2.0)
    idx = np.flatnonzero(np.abs(w) > SIGN_TOL)
    if idx.size:
        z = w[idx[0]]
        w = w * (np.conj(z) / abs(z))
    return mu, w


def pinv_from_eigh(vals, vecs, shift, rank_tol: float = RANK_TOL, exclude=()):
    """Pseudoinverse of ``V diag(vals) V^H - shift I`` from a known
    eigen-decomposition. Shifted eigenvalues below ``rank_tol`` relative to the
    largest one, and the indices in ``exclude``, are inverted to zero."""
    inv = _pinv_diag(vals, shift, rank_tol, exclude)
    return (vecs * inv) @ vecs.conj().T


def _pinv_diag(vals, shift, rank_tol, exclude):
    d = np.asarray(vals) - shift
    scale = np.max(np.abs(d)) if d.size else 0.0
    keep = np.abs(d) > rank_tol * scale
    for i in exclude:
        keep[i] = False
    inv = np.zeros_like(d)
    inv[keep] = 1.0 / d[keep]
    return inv


def pinv_apply(vals, vecs, shift, v, rank_tol: float = RANK_TOL, exclude=(), transpose=False):
    """Apply the matrix of :func:`pinv_from_eigh` (or its plain transpose) to
    ``v`` without forming it."""
    inv = _pinv_diag(vals, shift, rank_tol, exclude)
    if transpose:
        return vecs.conj() @ (inv * (vecs.T @ v))
    return vecs @ (inv * (vecs.conj().T @ v))


def pseudoinverse_shifted(A, shift: float, rank_tol: float = RANK_TOL):
    """Moore-Penrose pseudoinverse of ``A - shift I`` for symmetric ``A``.

    For a simple eigenvalue ``shift`` this is the group inverse of
    ``A - shift I``.
    """
    vals, vecs = np.linalg.eigh(sym_part(A))
    G = pinv_from_eigh(vals, vecs, shift, rank_tol)
    return sym_part(G)


def complex_pseudoinverse_shifted(B, mu: float, rank_tol: float = RANK_TOL):
    """Pseudoinverse of ``B - i mu I`` for a real skew-symmetric ``B``."""
    sigma, V = skew_eigh(B)
    # B - i mu I = V diag(i (sigma - mu)) V^H
    return pinv_from_eigh(1j * sigma, V, 1j * mu, rank_tol)


def qr_thin(K):
    """Thin QR of an ``n x 2`` matrix with nonnegative diagonal in ``Rf``.

    Returns ``(U, Rf, deficient)``; ``deficient`` flags a (near-)zero diagonal
    entry of ``Rf`` relative to the column scale.
    """
    K = np.asarray(K, dtype=float)
    U, Rf = np.linalg.qr(K)
    signs = np.where(np.diag(Rf) < 0, -1.0, 1.0)
    U = U * signs
    Rf = signs[:, None] * Rf
    scale = max(np.linalg.norm(K), np.finfo(float).tiny)
    deficient = bool(np.min(np.abs(np.diag(Rf))) <= 1e-12 * scale)
    return U, Rf, deficient
