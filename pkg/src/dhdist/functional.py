"""Inner-iteration functionals and their structured gradients.

For a perturbation size ``eps`` and a perturbation triple ``(Delta, Theta,
Gamma)`` the perturbed matrices are ``E + eps Delta``, ``R + eps Theta`` and
``J + eps Gamma``. Three functionals are available:

* ``ODD``   (n odd): uses the real null vector ``w`` of the perturbed ``J``;
* ``EVEN``  (n even): uses the eigenpair ``(i mu, w)`` closest to zero;
* ``UNIFIED`` (any n): penalizes ``|(R + eps Theta) x|`` and ``|(J + eps Gamma) x|``
  for the smallest eigenvector ``x`` of ``E + eps Delta``.

All gradients are returned as the structured matrices ``G`` with
``d/dt F = eps * <G, d/dt (Delta, Theta, Gamma)>``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateEigenvalue, InputError
from .linalg import (
    RANK_TOL,
    _pair_subspace,
    fix_sign,
    frobenius_inner,
    pinv_apply,
    skew_eigh,
    skew_part,
    sym_part,
)
from .pencil import DHPencil, Target


class Variant(str, enum.Enum):
    ODD = "odd"
    EVEN = "even"
    UNIFIED = "unified"

    @classmethod
    def for_pencil(cls, n: int, functional: str = "standard") -> "Variant":
        """``standard`` picks ODD or EVEN from the parity of ``n``."""
        if functional in ("standard", None):
            return cls.ODD if n % 2 else cls.EVEN
        return cls(functional)


@dataclass(frozen=True)
class PerturbationTriple:
    """Structured perturbation ``(Delta, Theta, Gamma)``.

    ``Gamma is None`` means the ``J`` block is frozen (instability target).
    """

    Delta: np.ndarray
    Theta: np.ndarray
    Gamma: np.ndarray | None = None

    @classmethod
    def zeros(cls, n: int, frozen_gamma: bool = False) -> "PerturbationTriple":
        return cls(np.zeros((n, n)), np.zeros((n, n)), None if frozen_gamma else np.zeros((n, n)))

    def blocks(self):
        return (self.Delta, self.Theta, self.Gamma)

    def norm(self) -> float:
        return float(np.sqrt(frobenius_inner(self.blocks(), self.blocks())))

    def scaled(self, c: float) -> "PerturbationTriple":
        return PerturbationTriple(c * self.Delta, c * self.Theta,
                                  None if self.Gamma is None else c * self.Gamma)

    def normalized(self) -> "PerturbationTriple":
        nrm = self.norm()
        if nrm == 0.0:
            raise InputError("cannot normalize a zero perturbation")
        return self.scaled(1.0 / nrm)

    def axpy(self, h: float, other: "PerturbationTriple") -> "PerturbationTriple":
        """``self + h * other`` with exact structure restored."""
        G = None
        if self.Gamma is not None:
            G = skew_part(self.Gamma + h * other.Gamma)
        return PerturbationTriple(sym_part(self.Delta + h * other.Delta),
                                  sym_part(self.Theta + h * other.Theta), G)


@dataclass(frozen=True)
class EigenData:
    """Extremal eigen-information of the perturbed matrices.

    ``w`` is real for odd ``n`` (with ``mu == 0``) and complex for even ``n``;
    it is ``None`` when ``J`` plays no role (instability target).
    """

    lam: float
    x: np.ndarray
    nu: float
    u: np.ndarray
    w: np.ndarray | None = None
    mu: float = 0.0
    gap_E: float = np.inf
    gap_R: float = np.inf
    gap_J: float = np.inf
    # cached decompositions reused by the gradients
    _E_eig: tuple = field(default=None, repr=False, compare=False)
    _R_eig: tuple = field(default=None, repr=False, compare=False)
    _J_eig: tuple = field(default=None, repr=False, compare=False)
    _mats: tuple = field(default=None, repr=False, compare=False)

    @property
    def parity(self):
        if self.w is None:
            return None
        return "even" if np.iscomplexobj(self.w) else "odd"


@dataclass(frozen=True)
class GradientTriple:
    G_E: np.ndarray
    G_R: np.ndarray
    G_J: np.ndarray | None
    rho: float

    def as_triple(self) -> PerturbationTriple:
        return PerturbationTriple(self.G_E, self.G_R, self.G_J)


@dataclass(frozen=True)
class ScalarCouplings:
    theta: float
    eta: float = 0.0
    zeta: float = 0.0


def _align(v, prev):
    if prev is not None and np.real(np.vdot(prev, v)) < 0:
        return -v
    return v


def extract_eigendata(p: DHPencil, pert: PerturbationTriple, eps: float,
                      prev: EigenData | None = None, target=Target.SINGULARITY) -> EigenData:
    """Eigen-information of ``E + eps Delta``, ``R + eps Theta``, ``J + eps Gamma``.

    Signs of ``x``, ``u`` and a real ``w`` follow ``prev`` when given so that
    they vary continuously along a flow; otherwise the first significant entry
    is positive.
    """
    if eps < 0:
        raise InputError("eps must be nonnegative")
    target = Target.parse(target)
    Ee, Re, Je = p.perturbed(pert, eps)
    Ee, Re = sym_part(Ee), sym_part(Re)
    ev, EV = np.linalg.eigh(Ee)
    rv, RV = np.linalg.eigh(Re)
    n = p.n
    gap_E = float(ev[1] - ev[0]) if n > 1 else np.inf
    gap_R = float(rv[1] - rv[0]) if n > 1 else np.inf
    x = EV[:, 0] if prev is None else _align(EV[:, 0], prev.x)
    u = RV[:, 0] if prev is None else _align(RV[:, 0], prev.u)
    if prev is None:
        x, u = fix_sign(x), fix_sign(u)
    w, mu, gap_J, J_eig = None, 0.0, np.inf, None
    if target is Target.SINGULARITY:
        sigma, V = skew_eigh(Je)
        if n % 2:
            k = int(np.argmin(np.abs(sigma)))
            rest = np.delete(np.abs(sigma), k)
            gap_J = float(rest.min()) if rest.size else np.inf
            # real null vector: rotate the phase of the eigenvector away
            v = V[:, k]
            j = int(np.argmax(np.abs(v)))
            w = np.real(v * (np.conj(v[j]) / abs(v[j])))
            w /= np.linalg.norm(w)
            w = fix_sign(w) if prev is None or prev.w is None else _align(w, prev.w)
            J_eig = (sigma, V, (k,))
        else:
            k = n // 2
            q1, q2 = _pair_subspace(Je, sigma, V)
            mu = max(float(q1 @ Je @ q2), 0.0)
            w = (q1 + 1j * q2) / np.sqrt(2.0)
            if prev is not None and prev.w is not None and np.iscomplexobj(prev.w):
                z = np.vdot(w, prev.w)
                if abs(z) > 0:
                    w = w * (z / abs(z))
            gap_J = float(sigma[k + 1] - sigma[k]) if k + 1 < n else np.inf
            J_eig = (sigma, V, (k - 1, k))
    return EigenData(
        lam=float(ev[0]), x=x, nu=float(rv[0]), u=u, w=w, mu=mu,
        gap_E=gap_E, gap_R=gap_R, gap_J=gap_J,
        _E_eig=(ev, EV), _R_eig=(rv, RV), _J_eig=J_eig, _mats=(Ee, Re, Je),
    )


def couplings(data: EigenData) -> ScalarCouplings:
    theta = float(data.x @ data.u)
    if data.w is None:
        return ScalarCouplings(theta)
    if np.iscomplexobj(data.w):
        return ScalarCouplings(theta, float(data.x @ data.w.real), float(data.x @ data.w.imag))
    return ScalarCouplings(theta, float(data.x @ data.w))


def misalignment(x, v) -> float:
    """``1 - (x.v)^2`` for unit vectors, free of cancellation near ``|x.v| = 1``."""
    c = float(x @ v)
    r = x - np.copysign(1.0, c) * v
    return 0.5 * float(r @ r) * (1.0 + abs(c))


def plane_misalignment(x, w) -> float:
    """``1 - 2 (x.Re w)^2 - 2 (x.Im w)^2``, i.e. the squared distance of the unit
    vector ``x`` to the plane spanned by ``Re w`` and ``Im w``."""
    Q = np.sqrt(2.0) * np.column_stack([w.real, w.imag])
    r = x - Q @ (Q.T @ x)
    return float(r @ r)


def eval_F_odd(data: EigenData, extra_uw_term: bool = False) -> float:
    """``1/2 (lam^2 + nu^2 + 1 - (x.u)^2 + 1 - (x.w)^2)``.

    Without ``w`` (instability target) the last pair of terms is dropped.
    """
    F = data.lam**2 + data.nu**2 + misalignment(data.x, data.u)
    if data.w is not None:
        F += misalignment(data.x, data.w)
        if extra_uw_term:
            F += misalignment(data.u, data.w)
    return 0.5 * F


def eval_F_even(data: EigenData) -> float:
    """``1/2 (lam^2 + nu^2 + mu^2 + 1 - (x.u)^2 + 1 - 2 (x.Re w)^2 - 2 (x.Im w)^2)``."""
    F = data.lam**2 + data.nu**2 + misalignment(data.x, data.u)
    if data.w is not None:
        F += data.mu**2 + plane_misalignment(data.x, data.w)
    return 0.5 * F


def eval_F_unified(p: DHPencil, pert: PerturbationTriple, eps: float, data: EigenData) -> float:
    """``1/2 (lam^2 + nu^2 + |(R + eps Theta) x|^2 + |(J + eps Gamma) x|^2)``.

    The ``J`` term is omitted when ``data`` carries no skew information.
    """
    Ee, Re, Je = data._mats if data._mats is not None else p.perturbed(pert, eps)
    t = Re @ data.x
    F = data.lam**2 + data.nu**2 + t @ t
    if data.w is not None:
        z = Je @ data.x
        F += z @ z
    return 0.5 * float(F)


def eval_F(p, pert, eps, data, variant: Variant, extra_uw_term: bool = False) -> float:
    if variant is Variant.UNIFIED:
        return eval_F_unified(p, pert, eps, data)
    if variant is Variant.EVEN:
        return eval_F_even(data)
    return eval_F_odd(data, extra_uw_term)


def _check_gaps(data: EigenData, need_J: bool):
    checks = [("E", data.gap_E, data._E_eig[0]), ("R", data.gap_R, data._R_eig[0])]
    if need_J and data._J_eig is not None:
        checks.append(("J", data.gap_J, data._J_eig[0]))
    for which, gap, vals in checks:
        scale = max(float(np.max(np.abs(vals))), np.finfo(float).tiny)
        if not gap > RANK_TOL * scale:
            raise DegenerateEigenvalue(
                f"extremal eigenvalue of the perturbed {which} is not simple (gap {gap:.3e})",
                which=which, gap=gap)


def _resolvents(data: EigenData):
    """Return callables applying the group inverses of the perturbed ``E``
    and ``R`` at their smallest eigenvalues."""
    ev, EV = data._E_eig
    rv, RV = data._R_eig

    def G(v):
        return pinv_apply(ev, EV, data.lam, v, exclude=(0,))

    def N(v):
        return pinv_apply(rv, RV, data.nu, v, exclude=(0,))

    return G, N


def _rho(pert: PerturbationTriple, GE, GR, GJ) -> float:
    return frobenius_inner(pert.blocks(), (GE, GR, GJ))


def assemble_gradient_odd(p: DHPencil, pert: PerturbationTriple, eps: float, data: EigenData,
                          extra_uw_term: bool = False):
    """Gradient of the odd functional.

    Returns ``(GradientTriple, p_vec, q_vec, r_vec)``; ``r_vec`` is ``None``
    when the skew block is frozen.
    """
    _check_gaps(data, need_J=data.w is not None)
    G, N = _resolvents(data)
    x, u, w = data.x, data.u, data.w
    theta = float(x @ u)
    pv = theta * G(u)
    qv = theta * N(x)
    rv = None
    GJ = None
    if w is not None:
        sigma, V, excl = data._J_eig

        def PT(v):
            return np.real(pinv_apply(1j * sigma, V, 0.0, v, exclude=excl, transpose=True))

        eta = float(x @ w)
        pv = pv + eta * G(w)
        rv = eta * PT(x)
        if extra_uw_term:
            kappa = float(u @ w)
            qv = qv + kappa * N(w)
            rv = rv + kappa * PT(u)
        GJ = skew_part(np.outer(rv, w))
    GE = sym_part(np.outer(data.lam * x + pv, x))
    GR = sym_part(np.outer(data.nu * u + qv, u))
    return GradientTriple(GE, GR, GJ, _rho(pert, GE, GR, GJ)), pv, qv, rv


def assemble_gradient_even(p: DHPencil, pert: PerturbationTriple, eps: float, data: EigenData):
    """Gradient of the even functional.

    The skew block is ``Skew(mu W + 2 (eta Re H + zeta Im H))`` with
    ``W = Re(w) Im(w)^T - Im(w) Re(w)^T`` and ``H = P^T x w^T`` where ``P`` is
    the pseudoinverse of ``J + eps Gamma - i mu I`` restricted to the
    complement of the ``+-i mu`` pair.
    """
    _check_gaps(data, need_J=data.w is not None)
    G, N = _resolvents(data)
    x, u = data.x, data.u
    theta = float(x @ u)
    pv = theta * G(u)
    qv = theta * N(x)
    GJ = None
    if data.w is not None:
        w = data.w
        a, b = w.real, w.imag
        eta, zeta = float(x @ a), float(x @ b)
        pv = pv + 2.0 * G(eta * a + zeta * b)
        sigma, V, excl = data._J_eig
        H = np.outer(pinv_apply(1j * sigma, V, 1j * data.mu, x, exclude=excl, transpose=True), w)
        W = np.outer(a, b) - np.outer(b, a)
        GJ = skew_part(data.mu * W + 2.0 * (eta * H.real + zeta * H.imag))
    GE = sym_part(np.outer(data.lam * x + pv, x))
    GR = sym_part(np.outer(data.nu * u + qv, u))
    return GradientTriple(GE, GR, GJ, _rho(pert, GE, GR, GJ))


def assemble_gradient_unified(p: DHPencil, pert: PerturbationTriple, eps: float, data: EigenData):
    """Gradient of the unified functional.

    Returns ``(GradientTriple, s, t, z)`` with ``t = (R + eps Theta) x``,
    ``z = (J + eps Gamma) x`` and ``s = G ((J + eps Gamma)^2 - (R + eps Theta)^2) x``.
    """
    ev, EV = data._E_eig
    scale = max(float(np.max(np.abs(ev))), np.finfo(float).tiny)
    if not data.gap_E > RANK_TOL * scale:
        raise DegenerateEigenvalue("smallest eigenvalue of the perturbed E is not simple",
                                   which="E", gap=data.gap_E)
    Ee, Re, Je = data._mats
    x, u = data.x, data.u
    t = Re @ x
    rhs = -(Re @ t)
    z = None
    GJ = None
    if data.w is not None:
        z = Je @ x
        rhs = rhs + Je @ z
        GJ = skew_part(np.outer(z, x))
    s = pinv_apply(ev, EV, data.lam, rhs, exclude=(0,))
    GE = sym_part(np.outer(data.lam * x + s, x))
    GR = sym_part(data.nu * np.outer(u, u) + np.outer(t, x))
    return GradientTriple(GE, GR, GJ, _rho(pert, GE, GR, GJ)), s, t, z


def assemble_gradient(p, pert, eps, data, variant: Variant, extra_uw_term: bool = False) -> GradientTriple:
    if variant is Variant.UNIFIED:
        return assemble_gradient_unified(p, pert, eps, data)[0]
    if variant is Variant.EVEN:
        return assemble_gradient_even(p, pert, eps, data)
    return assemble_gradient_odd(p, pert, eps, data, extra_uw_term)[0]


def with_rho(grad: GradientTriple, pert: PerturbationTriple) -> GradientTriple:
    """Recompute ``rho`` against another perturbation."""
    return replace(grad, rho=_rho(pert, grad.G_E, grad.G_R, grad.G_J))
