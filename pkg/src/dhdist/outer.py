"""Outer iteration on the perturbation size ``eps``.

``f(eps)`` is the terminal value of the inner flow at fixed ``eps``; the
structured distance is the smallest root of ``f``. It is located by
bisection with warm-started inner solves.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEigenvalue, InputError, NoUpperBracket
from .flow import FlowConfig, FlowState, integrate_to_stationary, random_structured
from .functional import PerturbationTriple, Variant
from .linalg import fix_sign, sym_eig_smallest
from .pencil import (
    DHPencil,
    Target,
    common_kernel_matrix,
    distance_bounds,
    optimal_perturbation_from_u,
    validate,
)

log = logging.getLogger(__name__)

SCHEMA = "dh-distance/1"


@dataclass
class OuterConfig:
    """Settings for :func:`bisection_distance` and :func:`f_curve`.

    ``flow`` holds keyword arguments forwarded to :class:`FlowConfig`
    (everything except ``eps``). ``workers > 1`` runs the random restarts of
    one inner solve in a thread pool; the selected start does not depend on
    it.
    """

    target: Target = Target.SINGULARITY
    method: str = "full"
    functional: str = "standard"
    tol: float = 1e-8
    tol_eps: float = 1e-5
    k_max: int = 60
    restarts: int = 3
    max_expand: int = 20
    kick: float = 0.1
    eps_lb: float | None = None
    eps_ub: float | None = None
    seed: int = 0
    workers: int = 1
    flow: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target = Target.parse(self.target)
        if self.method not in ("full", "rank2"):
            raise InputError(f"unknown method {self.method!r}")
        if self.tol <= 0 or self.tol_eps <= 0:
            raise InputError("tolerances must be positive")
        if self.kick < 0:
            raise InputError("kick must be nonnegative")
        if self.k_max < 1 or self.restarts < 0:
            raise InputError("k_max must be >= 1 and restarts >= 0")

    def flow_config(self, eps: float, n: int) -> FlowConfig:
        kw = dict(self.flow)
        kw.setdefault("variant", Variant.for_pencil(n, self.functional))
        kw.setdefault("target", self.target)
        kw.setdefault("seed", self.seed)
        # the outer loop only needs to know whether f <= tol
        kw.setdefault("f_stop", 0.01 * self.tol)
        return FlowConfig(eps=eps, **kw)


@dataclass
class InnerRecord:
    eps: float
    f: float
    steps: int
    reason: str


@dataclass
class DistanceResult:
    eps_star: float
    bracket: tuple
    pert_star: PerturbationTriple
    null_vector: np.ndarray
    residuals: dict
    f_samples: list
    inner: list
    converged: bool
    target: Target = Target.SINGULARITY
    method: str = "full"
    bounds: tuple = (np.nan, np.nan)
    trace: list = field(default_factory=list)

    def perturbation_matrices(self):
        """Return ``(eps* Delta, eps* Theta, eps* Gamma)``; the last entry is a
        zero matrix when ``Gamma`` is frozen."""
        t = self.pert_star
        G = np.zeros_like(t.Delta) if t.Gamma is None else t.Gamma
        e = self.eps_star
        return e * t.Delta, e * t.Theta, e * G

    def to_dict(self) -> dict:
        dE, dR, dJ = self.perturbation_matrices()
        return {
            "schema": SCHEMA,
            "target": self.target.value,
            "method": self.method,
            "eps_star": self.eps_star,
            "bracket": [float(self.bracket[0]), float(self.bracket[1])],
            "bounds": [float(self.bounds[0]), float(self.bounds[1])],
            "converged": bool(self.converged),
            "null_vector": [float(v) for v in self.null_vector],
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "perturbation": {"E": dE.tolist(), "R": dR.tolist(), "J": dJ.tolist()},
            "f_samples": [[float(a), float(b)] for a, b in self.f_samples],
            "inner": [{"eps": r.eps, "f": r.f if np.isfinite(r.f) else None, "steps": r.steps,
                       "reason": r.reason} for r in self.inner],
        }


def write_result_json(result: DistanceResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)


def write_curve_csv(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epsilon", "f_value"])
        for e, f in samples:
            wr.writerow([repr(float(e)), repr(float(f))])


def _run_inner(p, init, fcfg, method):
    if method == "rank2":
        from .rank2 import integrate_rank2
        return integrate_rank2(p, init, fcfg)
    return integrate_to_stationary(p, init, fcfg)


def f_of_eps(p: DHPencil, eps: float, warm_start: PerturbationTriple | None,
             config: OuterConfig, restarts: int = 0,
             extra_starts=()) -> tuple[float, FlowState]:
    """Terminal functional value of the inner flow at ``eps``.

    The flow starts from ``extra_starts`` and ``warm_start`` (default
    initialization when None), in that order; ``restarts`` additional random
    structured starts are tried and the lowest terminal value is kept (ties go
    to the earlier start). Starts stop early once one of them reaches the
    flow's ``f_stop``.
    """
    fcfg = config.flow_config(eps, p.n)
    rng = np.random.default_rng(config.seed + 7919)
    starts = list(extra_starts) + [warm_start] + [
        random_structured(p.n, rng, fcfg.target is Target.INSTABILITY, fcfg.sparsity)
        for _ in range(restarts)
    ]

    def run(k):
        try:
            return _run_inner(p, starts[k], fcfg, config.method)
        except DegenerateEigenvalue as exc:
            log.debug("start %d at eps=%g failed: %s", k, eps, exc)
            return None

    if config.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, range(len(starts))))
    else:
        results = []
        for k in range(len(starts)):
            results.append(run(k))
            if results[-1] is not None and results[-1].F <= fcfg.f_stop:
                break
    # same choice as the sequential loop: first start below f_stop, else the
    # lowest value (ties go to the earlier start)
    best = None
    for st in results:
        if st is None:
            continue
        if best is None or st.F < best.F:
            best = st
        if best.F <= fcfg.f_stop:
            break
    if best is None:
        raise DegenerateEigenvalue(f"every inner start failed at eps={eps:g}")
    return float(best.F), best


def upper_bracket_start(p: DHPencil, u, eps: float, target=Target.SINGULARITY,
                        rank2: bool = False) -> PerturbationTriple:
    """Start for the inner flow at ``eps`` built from ``Delta^u``.

    When ``eps`` exceeds ``|Delta^u|`` the surplus is spent on positive
    semidefinite terms acting on the complement of ``u`` in the ``E`` and
    ``R`` blocks. These keep ``u`` in the kernels and, for positive
    semidefinite ``E`` and ``R``, make it the simple smallest eigenvector, so
    the start is an exact root of the functional. With ``rank2`` the surplus
    goes along ``(I - uu^T) Y u`` instead, which keeps each block at rank two,
    and a tilt of ``-1e-6 * eps * uu^T`` makes ``u`` the simple smallest
    eigenvector when a block has a multiple kernel (at a cost of order
    ``1e-12`` in the functional).
    """
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    base = optimal_perturbation_from_u(p, u, target)
    if rank2:
        tilt = 1e-6 * eps * np.outer(u, u)
        base = PerturbationTriple(base.Delta - tilt, base.Theta - tilt, base.Gamma)
    d = base.norm()
    if eps <= d * (1 + 1e-12):
        return base.normalized()
    # the slack terms are Frobenius-orthogonal to base, so the norm is exact
    c = np.sqrt((eps**2 - d**2) / 2.0)
    Q = np.eye(p.n) - np.outer(u, u)

    def slack(Y):
        if not rank2:
            return Q / np.linalg.norm(Q)
        f = Q @ (Y @ u)
        if np.linalg.norm(f) <= 1e-12 * max(np.linalg.norm(Y), 1.0):
            f = Q[:, int(np.argmax(np.diag(Q)))]
        f = f / np.linalg.norm(f)
        return np.outer(f, f)

    start = PerturbationTriple(base.Delta + c * slack(p.E), base.Theta + c * slack(p.R), base.Gamma)
    return start.normalized()


def extract_null_vector(p: DHPencil, eps_star: float, pert_star: PerturbationTriple,
                        target: Target = Target.SINGULARITY):
    """Common kernel direction of the perturbed triple and its residuals.

    Returns ``(c, residuals)`` where ``c`` is the smallest eigenvector of
    ``Ee^2 + Re^2 - Je^2`` (``Ee^2 + Re^2`` for the instability target) and
    ``residuals`` maps ``E``, ``R``, ``J`` to the norms of the perturbed
    matrices applied to ``c``.
    """
    Ee, Re, Je = p.perturbed(pert_star, eps_star)
    blocks = [Ee, Re] if Target(target) is Target.INSTABILITY else [Ee, Re, Je]
    # smallest right singular vector of the stacked blocks: the same vector,
    # without squaring the residuals into roundoff
    _, _, Vt = np.linalg.svd(np.vstack(blocks))
    c = fix_sign(Vt[-1])
    res = {"E": np.linalg.norm(Ee @ c), "R": np.linalg.norm(Re @ c), "J": np.linalg.norm(Je @ c)}
    return c, res


def _singular_result(p, target, method, bounds):
    _, c, _ = sym_eig_smallest(common_kernel_matrix(p, target))
    pert = PerturbationTriple.zeros(p.n, frozen_gamma=target is Target.INSTABILITY)
    _, res = extract_null_vector(p, 0.0, pert, target)
    return DistanceResult(0.0, (0.0, 0.0), pert, c, res, [(0.0, 0.0)], [], True,
                          target, method, bounds)


def bisection_distance(p: DHPencil, config: OuterConfig | None = None) -> DistanceResult:
    """Structured distance by bisection on ``f(eps) <= tol``.

    The bracket defaults to the closed-form lower and upper bounds. The upper
    end is doubled (up to ``max_expand`` times) until ``f <= tol``; the lower
    end stays at the proven bound meanwhile and is not evaluated (a
    user-supplied ``eps_lb`` is). The inner
    solve at the first ``eps`` uses ``restarts`` random starts; later solves
    warm-start from the minimizer at the nearer bracket end. If that solve
    ends above ``tol``, it is repeated once from the upper-end minimizer plus a
    random structured kick of relative size ``kick`` (0 disables the retry).

    Raises
    ------
    NoUpperBracket
        If no upper end with ``f <= tol`` is found.
    """
    config = config or OuterConfig()
    target = config.target
    lo_b, up_b = distance_bounds(p, target)
    if validate(p).common_kernel_dim > 0 or up_b == 0.0:
        return _singular_result(p, target, config.method, (lo_b, up_b))

    samples, inner = [], []
    rng = np.random.default_rng(config.seed + 104729)

    def solve(eps, warm, restarts=0, extra=()):
        try:
            f, st = f_of_eps(p, eps, warm, config, restarts, extra)
        except DegenerateEigenvalue as exc:
            # no start could be evaluated: not a root as far as we can tell
            log.info("eps=%.10g: %s", eps, exc)
            inner.append(InnerRecord(float(eps), float("inf"), 0, "degenerate"))
            return float("inf"), None
        samples.append((eps, f))
        inner.append(InnerRecord(float(eps), f, st.accepted, st.reason))
        log.info("eps=%.10g f=%.3e steps=%d (%s)", eps, f, st.accepted, st.reason)
        return f, st

    eps_ub = config.eps_ub if config.eps_ub is not None else up_b
    eps_lb = config.eps_lb if config.eps_lb is not None else lo_b
    if not 0 <= eps_lb <= eps_ub:
        raise InputError("need 0 <= eps_lb <= eps_ub")

    # the perturbation behind the upper bound, padded to size eps_ub, is a root
    _, v, _ = sym_eig_smallest(common_kernel_matrix(p, target))
    f_ub, st_ub = solve(eps_ub, upper_bracket_start(p, v, eps_ub, target,
                                                     config.method == "rank2"),
                        config.restarts)
    expand = 0
    while f_ub > config.tol:
        if expand >= config.max_expand:
            raise NoUpperBracket(f"f({eps_ub:g}) = {f_ub:.3e} > tol after {expand} expansions")
        eps_ub *= 2.0
        expand += 1
        f_ub, st_ub = solve(eps_ub, None if st_ub is None else st_ub.pert)

    st_lb = None
    if config.eps_lb is not None:
        # a user-supplied lower end is checked; the default one is a proven bound
        f_lb, st_lb = solve(eps_lb, st_ub.pert)
        if f_lb <= config.tol:
            eps_ub, st_ub = eps_lb, st_lb
    rank2 = config.method == "rank2"

    def kernel_vector(st, eps):
        c, _ = extract_null_vector(p, eps, st.pert, target)
        return c, optimal_perturbation_from_u(p, c, target).norm()

    c_ub, d_ub = v, optimal_perturbation_from_u(p, v, target).norm()
    c, d = kernel_vector(st_ub, eps_ub)
    if d < d_ub:
        c_ub, d_ub = c, d
    k = 0
    while eps_ub - eps_lb > config.tol_eps * eps_ub and k < config.k_max:
        k += 1
        mid = 0.5 * (eps_lb + eps_ub)
        near_ub = st_lb is None or (eps_ub - mid) <= (mid - eps_lb)
        warm = st_ub.pert if near_ub else st_lb.pert
        # the construction at the upper end's kernel vector, padded to mid
        extra = [upper_bracket_start(p, c_ub, mid, target, rank2)] if mid >= d_ub else []
        f, st = solve(mid, warm, extra=extra)
        if f > config.tol and config.kick > 0:
            # warm starts near the critical eps sit on saddles or on the
            # branch continued from below; retry from the root side, kicked
            kick = random_structured(p.n, rng, st_ub.pert.Gamma is None)
            f2, st2 = solve(mid, st_ub.pert.axpy(config.kick, kick).normalized())
            if f2 < f:
                f, st = f2, st2
        if f <= config.tol:
            eps_ub, st_ub = mid, st
            c, d = kernel_vector(st, mid)
            if d < d_ub:
                c_ub, d_ub = c, d
        else:
            eps_lb, st_lb = mid, st
    converged = eps_ub - eps_lb <= config.tol_eps * eps_ub
    c, res = extract_null_vector(p, eps_ub, st_ub.pert, target)
    return DistanceResult(float(eps_ub), (float(eps_lb), float(eps_ub)), st_ub.pert, c, res,
                          samples, inner, converged, target, config.method, (lo_b, up_b),
                          list(st_ub.history))


def f_curve(p: DHPencil, eps_grid, config: OuterConfig | None = None):
    """Warm-started sweep of ``f`` over an increasing grid.

    Returns a list of ``(eps, f)`` pairs in grid order.
    """
    config = config or OuterConfig()
    grid = np.asarray(eps_grid, dtype=float)
    if np.any(np.diff(grid) < 0) or np.any(grid < 0):
        raise InputError("eps_grid must be nonnegative and increasing")
    out, warm = [], None
    for i, eps in enumerate(grid):
        f, st = f_of_eps(p, float(eps), warm, config, config.restarts if i == 0 else 0)
        out.append((float(eps), f))
        warm = st.pert
    return out

