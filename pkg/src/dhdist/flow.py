"""Full-matrix constrained gradient flows at fixed ``eps``.

The flow

    d/dt (Delta, Theta, Gamma) = -G + rho (Delta, Theta, Gamma),
    rho = <G, (Delta, Theta, Gamma)>,

is the gradient system of the chosen functional restricted to structured
triples of unit Frobenius norm. It is integrated by explicit Euler with
renormalization and a step-size control that accepts a step only if the
functional decreases.

Two rules propose the next trial step after an accepted one: ``"growth"``
multiplies ``h`` by 1.2, ``"bb"`` uses the Barzilai-Borwein quotient
``<s, y> / <y, y>`` of the last step ``s`` and RHS change ``y``. The second
one copes far better with the stiffness caused by small eigenvalue gaps.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateEigenvalue, StalledFlow
from .functional import (
    EigenData,
    GradientTriple,
    PerturbationTriple,
    Variant,
    assemble_gradient,
    eval_F,
    extract_eigendata,
)
from .linalg import frobenius_inner, skew_part, sym_part
from .pencil import DHPencil, SparsityPattern, Target

log = logging.getLogger(__name__)


@dataclass
class FlowConfig:
    eps: float
    variant: Variant | None = None
    target: Target = Target.SINGULARITY
    h0: float = 0.1
    h_min: float = 1e-8
    h_max: float | None = None
    tol_stationary: float | None = None
    tol_F: float = 1e-12
    f_stop: float = 0.0
    max_steps: int = 5000
    sparsity: SparsityPattern | None = None
    extra_uw_term: bool = False
    seed: int = 0
    step_rule: str = "bb"

    def __post_init__(self):
        if self.step_rule not in ("growth", "bb"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.h_max is None:
            self.h_max = 1.0 if self.step_rule == "growth" else 1e4
        self.target = Target.parse(self.target)
        if self.variant is not None:
            self.variant = Variant(self.variant)
        if not self.h_min <= self.h0 <= self.h_max:
            raise ValueError("need h_min <= h0 <= h_max")
        if self.tol_F <= 0 or (self.tol_stationary is not None and self.tol_stationary <= 0):
            raise ValueError("tolerances must be positive")

    def resolved_variant(self, n: int) -> Variant:
        v = self.variant or Variant.for_pencil(n)
        if v is Variant.ODD and n % 2 == 0 and self.target is Target.SINGULARITY:
            raise ValueError("the odd functional needs odd n")
        if v is Variant.EVEN and n % 2 == 1 and self.target is Target.SINGULARITY:
            raise ValueError("the even functional needs even n")
        return v


@dataclass
class FlowState:
    pert: PerturbationTriple
    data: EigenData
    F: float
    h: float
    grad: GradientTriple | None = None
    residual: float = np.inf
    accepted: int = 0
    rejected: int = 0
    converged: bool = False
    reason: str = ""
    history: list = field(default_factory=list)
    factors: object = None

    @property
    def steps(self) -> int:
        return self.accepted


def _masked(grad: GradientTriple, pert: PerturbationTriple, sp: SparsityPattern | None):
    if sp is None:
        return grad
    GE = np.where(sp.E, grad.G_E, 0.0)
    GR = np.where(sp.R, grad.G_R, 0.0)
    GJ = None if grad.G_J is None else np.where(sp.J, grad.G_J, 0.0)
    return GradientTriple(GE, GR, GJ, frobenius_inner(pert.blocks(), (GE, GR, GJ)))


def gradient(p: DHPencil, pert: PerturbationTriple, data: EigenData, config: FlowConfig) -> GradientTriple:
    """Structured (and, if requested, sparsity-masked) gradient with its rho."""
    variant = config.resolved_variant(p.n)
    g = assemble_gradient(p, pert, config.eps, data, variant, config.extra_uw_term)
    if pert.Gamma is None:
        g = GradientTriple(g.G_E, g.G_R, None, frobenius_inner(pert.blocks(), (g.G_E, g.G_R, None)))
    return _masked(g, pert, config.sparsity)


def rhs_from_gradient(pert: PerturbationTriple, g: GradientTriple) -> PerturbationTriple:
    r = g.rho
    dG = None if pert.Gamma is None else -g.G_J + r * pert.Gamma
    return PerturbationTriple(-g.G_E + r * pert.Delta, -g.G_R + r * pert.Theta, dG)


def rhs(p: DHPencil, state: FlowState, config: FlowConfig) -> PerturbationTriple:
    """Right-hand side ``-G + rho * pert`` at ``state``."""
    g = state.grad if state.grad is not None else gradient(p, state.pert, state.data, config)
    return rhs_from_gradient(state.pert, g)


def _evaluate(p, pert, config, prev=None):
    data = extract_eigendata(p, pert, config.eps, prev=prev, target=config.target)
    variant = config.resolved_variant(p.n)
    F = eval_F(p, pert, config.eps, data, variant, config.extra_uw_term)
    return data, F


def make_state(p: DHPencil, pert: PerturbationTriple, config: FlowConfig, prev=None) -> FlowState:
    """Evaluate eigen-data, functional and gradient at ``pert``."""
    data, F = _evaluate(p, pert, config, prev)
    g = gradient(p, pert, data, config)
    return FlowState(pert=pert, data=data, F=F, h=config.h0, grad=g,
                     residual=rhs_from_gradient(pert, g).norm())


def _next_h(h, pert_old, pert_new, d_old, d_new, config):
    if config.step_rule == "growth":
        return min(1.2 * h, config.h_max)
    s = tuple(None if a is None else a - b for a, b in zip(pert_new.blocks(), pert_old.blocks()))
    y = tuple(None if a is None else b - a for a, b in zip(d_new.blocks(), d_old.blocks()))
    sy, yy = frobenius_inner(s, y), frobenius_inner(y, y)
    h_new = sy / yy if sy > 0 and yy > 0 else 2.0 * h
    return min(max(h_new, min(10.0 * config.h_min, h)), config.h_max)


def euler_step(p: DHPencil, state: FlowState, config: FlowConfig) -> FlowState:
    """One accepted explicit Euler step with F-decrease control.

    Halves ``h`` until the renormalized candidate lowers ``F`` (candidates
    with a degenerate extremal eigenvalue are rejected as well), then proposes
    the next trial step by ``config.step_rule``. Raises
    :class:`StalledFlow` when both ``h`` and the step length ``h * |d|``
    fall below ``h_min``.
    """
    d = rhs(p, state, config)
    dn = d.norm()
    h = state.h
    rejected = state.rejected
    while h >= config.h_min or h * dn >= config.h_min:
        cand = state.pert.axpy(h, d).normalized()
        try:
            data, F = _evaluate(p, cand, config, prev=state.data)
            if F < state.F:
                g = gradient(p, cand, data, config)
                d_new = rhs_from_gradient(cand, g)
                return replace(
                    state, pert=cand, data=data, F=F, grad=g, residual=d_new.norm(),
                    h=_next_h(h, state.pert, cand, d, d_new, config),
                    accepted=state.accepted + 1, rejected=rejected)
        except DegenerateEigenvalue:
            pass
        rejected += 1
        h *= 0.5
    raise StalledFlow(f"no decrease of F for h >= {config.h_min:g}",
                      state=replace(state, rejected=rejected))


def random_structured(n: int, rng, frozen_gamma: bool = False,
                      sparsity: SparsityPattern | None = None) -> PerturbationTriple:
    D = sym_part(rng.standard_normal((n, n)))
    T = sym_part(rng.standard_normal((n, n)))
    G = None if frozen_gamma else skew_part(rng.standard_normal((n, n)))
    if sparsity is not None:
        D, T = np.where(sparsity.E, D, 0.0), np.where(sparsity.R, T, 0.0)
        G = None if G is None else np.where(sparsity.J, G, 0.0)
    return PerturbationTriple(D, T, G).normalized()


def default_init(p: DHPencil, config: FlowConfig) -> PerturbationTriple:
    """Normalized negative gradient at the unperturbed pencil; a random
    structured direction when that gradient is unavailable or zero."""
    frozen = config.target is Target.INSTABILITY
    zero = PerturbationTriple.zeros(p.n, frozen_gamma=frozen)
    try:
        data, _ = _evaluate(p, zero, config)
        g = gradient(p, zero, data, config)
        init = PerturbationTriple(-g.G_E, -g.G_R, None if g.G_J is None else -g.G_J)
        if init.norm() > 1e-14:
            return init.normalized()
    except DegenerateEigenvalue:
        pass
    rng = np.random.default_rng(config.seed)
    return random_structured(p.n, rng, frozen, config.sparsity)


def prepare_init(p: DHPencil, init: PerturbationTriple | None, config: FlowConfig) -> PerturbationTriple:
    if init is None:
        return default_init(p, config)
    if config.target is Target.INSTABILITY and init.Gamma is not None:
        init = PerturbationTriple(init.Delta, init.Theta, None)
    if config.target is Target.SINGULARITY and init.Gamma is None:
        init = PerturbationTriple(init.Delta, init.Theta, np.zeros((p.n, p.n)))
    sp = config.sparsity
    if sp is not None:
        init = PerturbationTriple(np.where(sp.E, init.Delta, 0.0), np.where(sp.R, init.Theta, 0.0),
                                  None if init.Gamma is None else np.where(sp.J, init.Gamma, 0.0))
    if init.norm() == 0.0:
        return default_init(p, config)
    return init.normalized()


def _initial_state(p, init, config):
    init = prepare_init(p, init, config)
    rng = np.random.default_rng(config.seed + 1)
    for _ in range(20):
        try:
            return make_state(p, init, config)
        except DegenerateEigenvalue:
            bump = random_structured(p.n, rng, init.Gamma is None, config.sparsity)
            init = init.axpy(1e-6, bump).normalized()
    return make_state(p, init, config)


def integrate_to_stationary(p: DHPencil, init: PerturbationTriple | None, config: FlowConfig,
                            trace=None, stepper=None) -> FlowState:
    """Run Euler steps until the flow is stationary.

    Stops when the RHS norm drops below ``tol_stationary`` (default
    ``1e-8`` times its initial value, capped at ``1e-8``), when the relative decrease of ``F`` stays
    below ``tol_F`` for 10 consecutive steps, when ``F <= f_stop``, or after
    ``max_steps``. ``trace`` may be a list collecting
    ``(step, h, F, residual)`` tuples.
    """
    state = _initial_state(p, init, config)
    return run_flow(p, state, config, euler_step if stepper is None else stepper, trace)


def run_flow(p, state, config, stepper, trace=None):
    tol_res = config.tol_stationary
    if tol_res is None:
        tol_res = 1e-8 * min(max(state.residual, np.finfo(float).tiny), 1.0)
    state.history = [(0, state.h, state.F, state.residual)]
    small = 0
    while True:
        if state.F <= config.f_stop:
            state.converged, state.reason = True, "f_stop"
            break
        if state.residual <= tol_res:
            state.converged, state.reason = True, "stationary"
            break
        if state.accepted >= config.max_steps:
            state.reason = "max_steps"
            break
        F_old = state.F
        try:
            state = stepper(p, state, config)
        except StalledFlow as exc:
            state = exc.state
            state.reason = "stalled"
            break
        state.history.append((state.accepted, state.h, state.F, state.residual))
        if F_old - state.F <= config.tol_F * max(abs(F_old), np.finfo(float).tiny):
            small += 1
            if small >= 10:
                state.converged, state.reason = True, "tol_F"
                break
        else:
            small = 0
    if trace is not None:
        trace.extend(state.history)
    return state


def write_trace_csv(rows, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "h", "F", "residual"])
        for r in rows:
            wr.writerow([r[0], repr(float(r[1])), repr(float(r[2])), repr(float(r[3]))])


def _alignment(A, B):
    na, nb = np.linalg.norm(A), np.linalg.norm(B)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return abs(frobenius_inner(A, B)) / (na * nb)


def stationarity_alignment_check(p: DHPencil, state: FlowState, config: FlowConfig, tol: float = 1e-6) -> dict:
    """Check that each perturbation block is parallel to its gradient block,
    which characterizes stationary points (and forces rank <= 2 in the odd
    case)."""
    g = state.grad if state.grad is not None else gradient(p, state.pert, state.data, config)
    pairs = [("Delta", state.pert.Delta, g.G_E), ("Theta", state.pert.Theta, g.G_R)]
    if state.pert.Gamma is not None:
        pairs.append(("Gamma", state.pert.Gamma, g.G_J))
    report = {"passed": True}
    for name, M, G in pairs:
        cos = _alignment(M, G)
        s = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(s > 1e-6 * max(s[0], np.finfo(float).tiny))) if s.size else 0
        report[name] = {"alignment": cos, "rank": rank}
        if cos < 1.0 - tol:
            report["passed"] = False
    return report
