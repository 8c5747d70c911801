"""Rank-2 factored flows.

Stationary points of the odd functional have perturbations of rank at most
two, so the flow can be restricted to ``X = U S U^T`` with ``U`` an ``n x 2``
matrix with orthonormal columns and ``S`` a symmetric (or skew) ``2 x 2``
core. The factored system is

    S' = U^T Z U,    U' = (I - U U^T) Z U S^{-1},

with ``Z = -G + rho X`` the full right-hand side. The integrator below is
the projector-splitting scheme (K-step, QR, S-step) with explicit Euler
substeps and a joint renormalization of the three cores.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateEigenvalue, DegenerateInput, InputError, SNearSingular, StalledFlow
from .flow import (
    FlowConfig,
    FlowState,
    _evaluate,
    _next_h,
    gradient,
    prepare_init,
    random_structured,
    run_flow,
)
from .functional import GradientTriple, PerturbationTriple
from .linalg import frobenius_inner, qr_thin, skew_eigh, skew_part, sym_part
from .pencil import DHPencil

S_REG = 1e-8


@dataclass(frozen=True)
class Rank2Sym:
    U: np.ndarray
    S: np.ndarray

    def matrix(self):
        return sym_part(self.U @ self.S @ self.U.T)

    def scaled(self, c):
        return replace(self, S=c * self.S)


@dataclass(frozen=True)
class Rank2Skew:
    U: np.ndarray
    S: np.ndarray

    def matrix(self):
        return skew_part(self.U @ self.S @ self.U.T)

    def scaled(self, c):
        return replace(self, S=c * self.S)


@dataclass(frozen=True)
class Rank2Triple:
    """Factored ``(Delta, Theta, Gamma)``; ``D3`` is ``None`` for a frozen
    skew block."""

    D1: Rank2Sym
    D2: Rank2Sym
    D3: Rank2Skew | None = None

    def factors(self):
        return (self.D1, self.D2, self.D3)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(f.S**2) for f in self.factors() if f is not None)))

    def normalized(self) -> "Rank2Triple":
        nrm = self.norm()
        if nrm == 0.0:
            raise DegenerateInput("zero rank-2 triple")
        c = 1.0 / nrm
        return Rank2Triple(self.D1.scaled(c), self.D2.scaled(c),
                           None if self.D3 is None else self.D3.scaled(c))

    def to_perturbation(self) -> PerturbationTriple:
        return PerturbationTriple(self.D1.matrix(), self.D2.matrix(),
                                  None if self.D3 is None else self.D3.matrix())


def _complement(U):
    return np.eye(U.shape[0]) - U @ U.T


def project_tangent_sym(X: Rank2Sym, Z):
    """Orthogonal projection of a symmetric ``Z`` onto the tangent space at
    ``X``: ``Z - (I - UU^T) Z (I - UU^T)``."""
    Q = _complement(X.U)
    return sym_part(Z - Q @ Z @ Q)


def project_tangent_skew(X: Rank2Skew, Z):
    """Skew-symmetric analogue of :func:`project_tangent_sym`."""
    Q = _complement(X.U)
    return skew_part(Z - Q @ Z @ Q)


def _project(f, Z):
    return project_tangent_skew(f, Z) if isinstance(f, Rank2Skew) else project_tangent_sym(f, Z)


def _rhs_blocks(pert: PerturbationTriple, g: GradientTriple):
    r = g.rho
    Z = [-g.G_E + r * pert.Delta, -g.G_R + r * pert.Theta]
    Z.append(None if pert.Gamma is None else -g.G_J + r * pert.Gamma)
    return Z


def projected_rhs(triple: Rank2Triple, pert: PerturbationTriple, g: GradientTriple) -> PerturbationTriple:
    """Tangent projection of the full right-hand side, blockwise."""
    Z = _rhs_blocks(pert, g)
    out = [None if f is None else _project(f, Zi) for f, Zi in zip(triple.factors(), Z)]
    return PerturbationTriple(*out)


def rank2_rhs_factored(triple: Rank2Triple, pert: PerturbationTriple, g: GradientTriple,
                       s_reg: float = S_REG):
    """Factored right-hand side ``((S1', U1'), (S2', U2'), (S3', U3'))``.

    ``pert`` must be the matrix triple represented by ``triple`` and ``g`` its
    gradient (with ``rho``). The third pair is ``None`` when the skew block is
    frozen. Raises :class:`SNearSingular` if a core has a singular value below
    ``s_reg``.
    """
    out = []
    for f, Z in zip(triple.factors(), _rhs_blocks(pert, g)):
        if f is None:
            out.append(None)
            continue
        smin = np.linalg.svd(f.S, compute_uv=False)[-1]
        if smin < s_reg:
            raise SNearSingular(f"core factor has singular value {smin:.3e} < {s_reg:g}")
        ZU = Z @ f.U
        Sdot = f.U.T @ ZU
        Sdot = skew_part(Sdot) if isinstance(f, Rank2Skew) else sym_part(Sdot)
        Udot = np.linalg.solve(f.S.T, (ZU - f.U @ (f.U.T @ ZU)).T).T
        out.append((Sdot, Udot))
    return tuple(out)


def _complete_basis(U, K, candidates):
    """Orthonormal ``n x 2`` basis whose first column spans ``K`` when ``K``
    has rank one; missing directions are taken from ``candidates``."""
    n = U.shape[0]
    cols = []
    for v in list(K.T) + list(candidates.T) + list(np.eye(n)):
        for c in cols:
            v = v - c * (c @ v)
        nv = np.linalg.norm(v)
        if nv > 1e-8 * max(1.0, np.linalg.norm(K)):
            cols.append(v / nv)
        if len(cols) == 2:
            break
    return np.column_stack(cols)


def _kstep(f, Z, h):
    K = f.U @ f.S + h * (Z @ f.U)
    U1, _, deficient = qr_thin(K)
    if deficient:
        U1 = _complete_basis(U1, K, np.column_stack([f.U, Z @ f.U]))
    M = U1.T @ f.U
    S0 = M @ f.S @ M.T
    S0 = skew_part(S0) if isinstance(f, Rank2Skew) else sym_part(S0)
    return type(f)(U1, S0)


def lowrank_integrator_step(p: DHPencil, triple: Rank2Triple, g0: GradientTriple, h: float,
                            config: FlowConfig, prev_data=None) -> Rank2Triple:
    """One step of the symmetry/skew-symmetry preserving low-rank integrator.

    ``g0`` is the gradient at the represented triple. The K-step uses it to
    update the bases; the S-step evaluates the gradient at ``U1 S(t0) U1^T``.
    The three cores are renormalized jointly at the end.
    """
    pert0 = triple.to_perturbation()
    Z0 = _rhs_blocks(pert0, g0)
    mid = [None if f is None else _kstep(f, Z, h) for f, Z in zip(triple.factors(), Z0)]
    mid_triple = Rank2Triple(*mid)
    mid_pert = mid_triple.to_perturbation()
    data, _ = _evaluate(p, mid_pert, config, prev=prev_data)
    g1 = gradient(p, mid_pert, data, config)
    Z1 = _rhs_blocks(mid_pert, g1)
    new = []
    for f, Z in zip(mid, Z1):
        if f is None:
            new.append(None)
            continue
        S1 = f.S + h * (f.U.T @ Z @ f.U)
        S1 = skew_part(S1) if isinstance(f, Rank2Skew) else sym_part(S1)
        new.append(type(f)(f.U, S1))
    return Rank2Triple(*new).normalized()


def _rank2_sym(A):
    vals, vecs = np.linalg.eigh(sym_part(A))
    idx = np.argsort(-np.abs(vals))[:2]
    return Rank2Sym(vecs[:, idx], np.diag(vals[idx]))


def _rank2_skew(B):
    B = skew_part(B)
    sigma, V = skew_eigh(B)
    # largest |sigma| pair: the two ends of the ascending spectrum
    Y = V[:, [0, -1]]
    Q, _, _ = np.linalg.svd(np.hstack([Y.real, Y.imag]), full_matrices=False)
    U = Q[:, :2]
    return Rank2Skew(U, skew_part(U.T @ B @ U))


def truncate_to_rank2(pert: PerturbationTriple) -> Rank2Triple:
    """Best rank-2 structured approximation of each block, jointly
    renormalized. Zero blocks get a coordinate basis and a zero core.

    Raises
    ------
    DegenerateInput
        If every block is zero.
    """
    n = pert.Delta.shape[0]
    if n < 2:
        raise InputError("rank-2 factorization needs n >= 2")
    if pert.norm() == 0.0:
        raise DegenerateInput("cannot factor a zero perturbation")
    E2 = np.eye(n)[:, :2]
    parts = []
    for M, skew in ((pert.Delta, False), (pert.Theta, False), (pert.Gamma, True)):
        if M is None:
            parts.append(None)
        elif not np.any(M):
            parts.append((Rank2Skew if skew else Rank2Sym)(E2.copy(), np.zeros((2, 2))))
        else:
            parts.append(_rank2_skew(M) if skew else _rank2_sym(M))
    return Rank2Triple(*parts).normalized()


def _make_rank2_state(p, triple, config):
    pert = triple.to_perturbation()
    data, F = _evaluate(p, pert, config)
    g = gradient(p, pert, data, config)
    return FlowState(pert=pert, data=data, F=F, h=config.h0, grad=g,
                     residual=projected_rhs(triple, pert, g).norm(), factors=triple)


def rank2_euler_step(p: DHPencil, state: FlowState, config: FlowConfig) -> FlowState:
    """Accepted low-rank integrator step with the same F-decrease control as
    the full flow."""
    triple = state.factors
    d_old = projected_rhs(triple, state.pert, state.grad)
    dn = d_old.norm()
    h = state.h
    rejected = state.rejected
    while h >= config.h_min or h * dn >= config.h_min:
        try:
            cand = lowrank_integrator_step(p, triple, state.grad, h, config, prev_data=state.data)
            pert = cand.to_perturbation()
            data, F = _evaluate(p, pert, config, prev=state.data)
            if F < state.F:
                g = gradient(p, pert, data, config)
                d_new = projected_rhs(cand, pert, g)
                return replace(
                    state, pert=pert, data=data, F=F, grad=g, residual=d_new.norm(),
                    h=_next_h(h, state.pert, pert, d_old, d_new, config),
                    accepted=state.accepted + 1, rejected=rejected, factors=cand)
        except (DegenerateEigenvalue, DegenerateInput):
            pass
        rejected += 1
        h *= 0.5
    raise StalledFlow(f"no decrease of F for h >= {config.h_min:g}",
                      state=replace(state, rejected=rejected))


def integrate_rank2(p: DHPencil, init: PerturbationTriple | Rank2Triple | None,
                    config: FlowConfig, trace=None) -> FlowState:
    """Rank-2 counterpart of :func:`~dhdist.flow.integrate_to_stationary`.

    A full-matrix ``init`` (or the default initialization) is truncated to
    rank two first. The returned state carries the factors in ``factors``.
    """
    if config.sparsity is not None:
        raise InputError("the rank-2 flow does not support sparsity patterns")
    if isinstance(init, Rank2Triple):
        triple = init.normalized()
    else:
        triple = truncate_to_rank2(prepare_init(p, init, config))
    rng = np.random.default_rng(config.seed + 1)
    for attempt in range(21):
        try:
            state = _make_rank2_state(p, triple, config)
            break
        except DegenerateEigenvalue:
            if attempt == 20:
                raise
            bump = random_structured(p.n, rng, triple.D3 is None)
            pert = triple.to_perturbation().axpy(1e-6, bump)
            triple = truncate_to_rank2(pert)
    return run_flow(p, state, config, rank2_euler_step, trace)


def gauge_residual(triple: Rank2Triple, rhs) -> float:
    """Largest ``|U^T U'|`` over the factored right-hand side."""
    worst = 0.0
    for f, r in zip(triple.factors(), rhs):
        if f is not None and r is not None:
            worst = max(worst, float(np.max(np.abs(f.U.T @ r[1]))))
    return worst


def represented_inner(a: Rank2Triple, b: Rank2Triple) -> float:
    return frobenius_inner(a.to_perturbation().blocks(), b.to_perturbation().blocks())
