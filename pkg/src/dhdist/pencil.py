"""Dissipative-Hamiltonian pencils ``lambda E - (J - R)``.

Holds the pencil container, structural validation, the closed-form distance
bounds, the direct (sphere-minimization) characterization of the structured
distances, the rank-two optimal perturbation built from a unit vector, and two
problem generators.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .linalg import fix_sign, skew_part, sym_part

log = logging.getLogger(__name__)

STRUCT_TOL = 1e-14
PSD_TOL = 1e-10
KERNEL_TOL = 1e-12


class Target(str, enum.Enum):
    """Which structured distance to compute."""

    SINGULARITY = "sing"
    INSTABILITY = "inst"

    @classmethod
    def parse(cls, value) -> "Target":
        if isinstance(value, cls):
            return value
        aliases = {"singularity": "sing", "instability": "inst", "index": "inst", "hi": "inst"}
        v = str(value).lower()
        return cls(aliases.get(v, v))


@dataclass(frozen=True)
class DHPencil:
    """The triple ``(E, J, R)``; ``E, R`` symmetric and ``J`` skew-symmetric.

    The constructor checks shapes and structure up to a relative tolerance and
    stores the exact symmetric/skew parts. Positive semidefiniteness is only
    reported by :func:`validate`, since perturbed pencils leave the PSD cone
    during the flows anyway.
    """

    E: np.ndarray
    J: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        mats = {}
        for name in ("E", "J", "R"):
            M = np.array(getattr(self, name), dtype=float)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise InputError(f"{name} must be square, got shape {M.shape}")
            mats[name] = M
        n = mats["E"].shape[0]
        if mats["J"].shape[0] != n or mats["R"].shape[0] != n:
            raise InputError(
                "dimension mismatch: "
                + ", ".join(f"{k}:{v.shape}" for k, v in mats.items())
            )
        for name, proj in (("E", sym_part), ("R", sym_part), ("J", skew_part)):
            M = mats[name]
            off = np.linalg.norm(M - proj(M))
            if off > STRUCT_TOL * max(np.linalg.norm(M), 1.0):
                kind = "skew-symmetric" if name == "J" else "symmetric"
                raise InputError(f"{name} is not {kind} (residual {off:.3e})")
            object.__setattr__(self, name, proj(M))

    @property
    def n(self) -> int:
        return self.E.shape[0]

    def perturbed(self, pert, eps: float):
        """Return ``(E + eps*Delta, R + eps*Theta, J + eps*Gamma)``."""
        Ee = self.E + eps * pert.Delta
        Re = self.R + eps * pert.Theta
        Je = self.J if pert.Gamma is None else self.J + eps * pert.Gamma
        return Ee, Re, Je


@dataclass(frozen=True)
class ValidationReport:
    is_symmetric_E: bool
    is_symmetric_R: bool
    is_skew_J: bool
    min_eig_E: float
    min_eig_R: float
    is_psd_E: bool
    is_psd_R: bool
    is_regular: bool
    common_kernel_dim: int

    @property
    def structure_ok(self) -> bool:
        return self.is_symmetric_E and self.is_symmetric_R and self.is_skew_J

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["structure_ok"] = self.structure_ok
        # plain Python scalars so the report serializes to JSON
        return {k: v.item() if isinstance(v, np.generic) else v for k, v in d.items()}


@dataclass(frozen=True)
class SparsityPattern:
    """Boolean masks for the admissible entries of the E, R and J perturbations."""

    E: np.ndarray
    R: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        for name in ("E", "R", "J"):
            M = np.asarray(getattr(self, name), dtype=bool)
            M = M | M.T
            if name == "J":
                M = M.copy()
                np.fill_diagonal(M, False)
            object.__setattr__(self, name, M)

    @classmethod
    def from_pencil(cls, p: DHPencil, tol: float = 0.0) -> "SparsityPattern":
        return cls(np.abs(p.E) > tol, np.abs(p.R) > tol, np.abs(p.J) > tol)


def _structure_residual(M, proj):
    return np.linalg.norm(M - proj(M))


def common_kernel_matrix(p: DHPencil, target=Target.SINGULARITY):
    """``E^2 + R^2 - J^2`` (``J`` dropped for the instability target).

    PSD, and its kernel is the common kernel of the involved matrices.
    """
    M = p.E @ p.E + p.R @ p.R
    if Target.parse(target) is Target.SINGULARITY:
        M = M - p.J @ p.J
    return sym_part(M)


def validate(p: DHPencil) -> ValidationReport:
    E, J, R = p.E, p.J, p.R
    tol_E = STRUCT_TOL * max(np.linalg.norm(E), 1.0)
    tol_R = STRUCT_TOL * max(np.linalg.norm(R), 1.0)
    tol_J = STRUCT_TOL * max(np.linalg.norm(J), 1.0)
    min_E = float(np.linalg.eigvalsh(E)[0])
    min_R = float(np.linalg.eigvalsh(R)[0])
    M = common_kernel_matrix(p)
    vals = np.linalg.eigvalsh(M)
    scale = max(float(np.max(np.abs(vals))), np.finfo(float).tiny)
    kdim = int(np.sum(vals <= KERNEL_TOL * scale)) if np.any(M) else p.n
    return ValidationReport(
        is_symmetric_E=_structure_residual(E, sym_part) <= tol_E,
        is_symmetric_R=_structure_residual(R, sym_part) <= tol_R,
        is_skew_J=_structure_residual(J, skew_part) <= tol_J,
        min_eig_E=min_E,
        min_eig_R=min_R,
        is_psd_E=min_E >= -PSD_TOL * max(np.linalg.norm(E), 1.0),
        is_psd_R=min_R >= -PSD_TOL * max(np.linalg.norm(R), 1.0),
        is_regular=kdim == 0,
        common_kernel_dim=kdim,
    )


def _bounds(M):
    lmin = max(float(np.linalg.eigvalsh(M)[0]), 0.0)
    lower = np.sqrt(lmin)
    return lower, np.sqrt(2.0) * lower


def singularity_bounds(p: DHPencil):
    """Lower and upper bounds ``sqrt(l)``, ``sqrt(2 l)`` with
    ``l = lambda_min(-J^2 + R^2 + E^2)``."""
    return _bounds(common_kernel_matrix(p, Target.SINGULARITY))


def instability_bounds(p: DHPencil):
    """Bounds for the distance to high index / instability; ``J`` is ignored."""
    return _bounds(common_kernel_matrix(p, Target.INSTABILITY))


def distance_bounds(p: DHPencil, target):
    if Target.parse(target) is Target.SINGULARITY:
        return singularity_bounds(p)
    return instability_bounds(p)


def direct_formula_value(p: DHPencil, u, target=Target.SINGULARITY) -> float:
    """Frobenius norm of the cheapest structured perturbation that makes ``u``
    a common null vector."""
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise InputError("u must have unit norm")
    target = Target.parse(target)
    Eu, Ru = p.E @ u, p.R @ u
    P = lambda v: v - u * (u @ v)  # noqa: E731
    s = 2 * np.sum(P(Eu) ** 2) + (u @ Eu) ** 2 + 2 * np.sum(P(Ru) ** 2) + (u @ Ru) ** 2
    if target is Target.SINGULARITY:
        s += 2 * np.sum((p.J @ u) ** 2)
    return float(np.sqrt(max(s, 0.0)))


def _sphere_descent(p, u, target, gtol, max_iter):
    """Riemannian gradient descent with Armijo backtracking for the squared
    direct formula. Returns ``(value_sq, u, converged)``."""
    M = common_kernel_matrix(p, target)
    E, R = p.E, p.R

    def fg(v):
        Ev, Rv, Mv = E @ v, R @ v, M @ v
        eE, eR = v @ Ev, v @ Rv
        f = 2.0 * (v @ Mv) - eE**2 - eR**2
        g = 4.0 * Mv - 4.0 * eE * Ev - 4.0 * eR * Rv
        return f, g - v * (v @ g)

    u = u / np.linalg.norm(u)
    f, g = fg(u)
    step = 1.0
    scale = max(np.linalg.norm(M, 2), np.finfo(float).tiny)
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= gtol:
            return f, u, True
        while True:
            cand = u - step * g
            cand /= np.linalg.norm(cand)
            fc, gc = fg(cand)
            if fc < f and fc <= f - 1e-4 * step * gn**2:
                break
            if step < 1e-16:
                # rounding floor: no representable decrease left
                return f, u, bool(gn <= 1e3 * gtol * scale)
            step *= 0.5
        # Barzilai-Borwein guess for the next trial step
        s, y = cand - u, gc - g
        sy = s @ y
        u, f, g = cand, fc, gc
        step = (s @ s) / sy if sy > 0 else 1.0
        step = min(max(step, 1e-8), 1e4)
    return f, u, False


def direct_formula_minimize(p: DHPencil, target=Target.SINGULARITY, restarts: int = 10,
                            seed=0, gtol: float = 1e-10, max_iter: int = 20000):
    """Minimize the direct formula over the unit sphere.

    Multistart projected-gradient descent: one warm start from the smallest
    eigenvector of the bound matrix plus ``restarts`` random starts. Returns
    ``(d, u_star)``; ``u_star`` is sign-normalized.
    """
    if restarts < 1:
        raise InputError("restarts must be >= 1")
    target = Target.parse(target)
    rng = np.random.default_rng(seed)
    _, V = np.linalg.eigh(common_kernel_matrix(p, target))
    starts = [V[:, 0]] + [rng.standard_normal(p.n) for _ in range(restarts)]
    best = None
    for k, u0 in enumerate(starts):
        f, u, ok = _sphere_descent(p, u0, target, gtol, max_iter)
        if not ok:
            log.debug("sphere descent start %d stopped before convergence", k)
        if best is None or f < best[0]:
            best = (f, u)
    f, u = best
    return float(np.sqrt(max(f, 0.0))), fix_sign(u)


def optimal_perturbation_from_u(p: DHPencil, u, target=Target.SINGULARITY):
    """The perturbation ``Delta_Y^u = -uu^T Y - Y uu^T + uu^T Y uu^T`` for
    ``Y = E, R`` (and ``J`` for the singularity target).

    Returns an unnormalized :class:`~dhdist.functional.PerturbationTriple`;
    ``Gamma`` is ``None`` for the instability target.
    """
    from .functional import PerturbationTriple

    u = np.asarray(u, dtype=float)
    target = Target.parse(target)

    def delta(Y):
        Yu = Y @ u
        uYu = u @ Yu
        # -u (Y^T u)^T - (Y u) u^T + (u^T Y u) u u^T
        return -np.outer(u, Y.T @ u) - np.outer(Yu, u) + uYu * np.outer(u, u)

    D = sym_part(delta(p.E))
    T = sym_part(delta(p.R))
    G = skew_part(delta(p.J)) if target is Target.SINGULARITY else None
    return PerturbationTriple(D, T, G)


def gen_random_dh(n: int, seed=0) -> DHPencil:
    """Random dH pencil: ``E, R`` normalized Gram matrices, ``J`` a normalized
    skew part of a Gaussian matrix. Deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, n))
    C = rng.standard_normal((n, n))
    E = A @ A.T
    R = B @ B.T
    J = skew_part(C)
    E /= np.linalg.norm(E)
    R /= np.linalg.norm(R)
    J /= np.linalg.norm(J)
    return DHPencil(E, J, R)


def gen_mass_spring_damper(N: int, m: int | None = None, gamma: float = 0.1,
                           mass: float = 1.0, damping: float = 0.5,
                           stiffness: float = 1.0) -> DHPencil:
    """First-order mass-spring-damper chain with ``m`` holonomic constraints.

    ``E = diag(K, M, 0)``, ``J = [[0, K, 0], [-K, 0, -G^T], [0, G, 0]]`` and
    ``R = diag(0, D, gamma I)``; dimension ``2N + m`` (``3N + 1`` for the
    default ``m = N + 1``).

    ``K`` is the stiffness of a chain where every mass is also tied to the
    ground, ``tridiag(-1, 3, -1) * stiffness``, so ``K >= stiffness * I`` and
    the distance to instability equals ``gamma`` whenever
    ``gamma <= min(stiffness, mass)``. ``G`` selects position ``i mod N`` in
    row ``i``.
    """
    if N < 1:
        raise InputError("N must be >= 1")
    if m is None:
        m = N + 1
    if m < 1 or gamma < 0:
        raise InputError("need m >= 1 and gamma >= 0")
    K = stiffness * (3.0 * np.eye(N) - np.eye(N, k=1) - np.eye(N, k=-1))
    M = mass * np.eye(N)
    D = damping * np.eye(N)
    G = np.zeros((m, N))
    G[np.arange(m), np.arange(m) % N] = 1.0
    n = 2 * N + m
    E = np.zeros((n, n))
    R = np.zeros((n, n))
    J = np.zeros((n, n))
    a, b = slice(0, N), slice(N, 2 * N)
    c = slice(2 * N, n)
    E[a, a] = K
    E[b, b] = M
    J[a, b] = K
    J[b, a] = -K
    J[b, c] = -G.T
    J[c, b] = G
    R[b, b] = D
    R[c, c] = gamma * np.eye(m)
    return DHPencil(E, J, R)


def example_5x5() -> DHPencil:
    """The 5x5 test pencil with two-decimal entries used in the regression
    tests (``E`` is slightly indefinite as printed)."""
    E = [[0.15, 0.02, -0.04, 0.02, -0.04],
         [0.02, 0.22, 0.00, -0.01, -0.03],
         [-0.04, 0.00, 0.11, -0.07, -0.04],
         [0.02, -0.01, -0.07, 0.01, 0.10],
         [-0.04, -0.03, -0.04, 0.10, 0.39]]
    R = [[0.49, -0.13, 0.05, -0.15, 0.11],
         [-0.13, 0.23, -0.05, -0.10, -0.19],
         [0.05, -0.05, 0.48, -0.06, 0.02],
         [-0.15, -0.10, -0.06, 0.55, 0.16],
         [0.11, -0.19, 0.02, 0.16, 0.48]]
    J = [[0.00, -0.27, -0.03, -0.01, 0.21],
         [0.27, 0.00, -0.15, 0.03, 0.11],
         [0.03, 0.15, 0.00, 0.07, -0.07],
         [0.01, -0.03, -0.07, 0.00, 0.05],
         [-0.21, -0.11, 0.07, -0.05, 0.00]]
    return DHPencil(np.array(E), np.array(J), np.array(R))
