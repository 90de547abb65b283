"""Sub/super-solution machinery: barriers, monotone iteration, box minimization.

The workhorse is the frozen-right-hand-side step ``A u_{n+1} = f(u_n)``.  The
right-hand side ``f(t) = lam t^{-q} + t^alpha`` is decreasing below the
flat-region scale, so the raw step is not order-preserving there; adding a
pointwise shift ``c`` large enough that ``f(t) + c t`` is nondecreasing on the
current order interval restores the comparison structure without moving the
fixed points.  With ``c`` chosen this way the iterates from a sub-solution
increase monotonically and stay below every super-solution, exactly as the
continuous theory predicts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .domain import DiscreteFunction
from .eigen import EigenPair, principal_eigenpair
from .errors import (EmptyInterval, InvalidMode, InvalidParams,
                     MonotonicityViolation, NoTwoRoots, NotConverged)
from .kernel import (KernelWeights, ProblemParams, apply_fplap, energy,
                     hessian_seminorm, solve_operator_equation)
from .nehari import (SolveOptions, SolveReport, _classify, _weak_residual,
                     barrier_scales, minimize_plus, verify_solution)


@dataclass(frozen=True)
class OrderInterval:
    """Pointwise-ordered pair of positive nodal functions bracketing a solution."""

    lower: DiscreteFunction
    upper: DiscreteFunction


def make_interval(lower: DiscreteFunction, upper: DiscreteFunction) -> OrderInterval:
    """Validated order interval.

    Raises:
        EmptyInterval: if the lower function is not strictly positive or
            exceeds the upper one somewhere.
    """
    if lower.mesh != upper.mesh:
        raise EmptyInterval("interval endpoints live on different meshes")
    if np.any(lower.values <= 0.0):
        raise EmptyInterval("lower endpoint must be strictly positive")
    if np.any(lower.values > upper.values):
        node = int(np.argmax(lower.values - upper.values))
        raise EmptyInterval(f"lower exceeds upper at node {node}")
    return OrderInterval(lower, upper)


def interval_defects(K: KernelWeights, params: ProblemParams,
                     interval: OrderInterval) -> tuple[float, float]:
    """Signed residual margins of the endpoints.

    Returns ``(sub_defect, super_defect)``: the largest violation of the
    sub-solution inequality by the lower endpoint and of the super-solution
    inequality by the upper endpoint (both nonpositive for an exact pair).
    """
    _, g_lo = _weak_residual(K, params, interval.lower.values)
    _, g_up = _weak_residual(K, params, interval.upper.values)
    return float(np.max(g_lo)), float(np.max(-g_up))


def build_subsolution(params: ProblemParams, eig: EigenPair,
                      upper: DiscreteFunction | None = None) -> DiscreteFunction:
    """Scaled eigenfunction that sub-solves the problem, capped by ``upper``.

    The scale is 99% of the eigen-relation cap ``(lam/lambda1)^(1/(p+q-1))``
    (valid because the eigenfunction is sup-normalized), further capped so the
    result stays below ``upper`` when given.

    Raises:
        EmptyInterval: if the resulting scale is not positive.
    """
    if params.lam <= 0.0:
        raise EmptyInterval("sub-solution construction needs lambda > 0")
    phi = eig.phi1.values
    t = (params.lam / eig.lambda1) ** (1.0 / (params.p + params.q - 1.0))
    if upper is not None:
        t = min(t, float(np.min(upper.values / phi)))
    t *= 0.99
    if t <= 0.0:
        raise EmptyInterval(f"sub-solution scale came out nonpositive: {t}")
    return DiscreteFunction(eig.phi1.mesh, t * phi)


def inner_solve(K: KernelWeights, p: float, f: DiscreteFunction,
                shift: float = 0.0, tol: float = 1e-12, maxiter: int = 60) -> DiscreteFunction:
    """Solve ``A u + shift*u = f``: the frozen-right-hand-side step.

    Unique minimizer of a strictly convex objective; for p = 2 a single
    symmetric positive-definite solve, for p > 2 damped Newton with guaranteed
    objective decrease.

    Raises:
        InvalidParams: if ``p`` disagrees with the kernel.
        NotConverged: if damped Newton stalls (p > 2 only).
    """
    if p != K.p:
        raise InvalidParams(f"kernel was built with p = {K.p}, got p = {p}")
    if f.mesh != K.mesh:
        raise InvalidParams("right-hand side lives on a different mesh")
    out = solve_operator_equation(K, f.values, shift=shift, tol=tol, maxiter=maxiter)
    return DiscreteFunction(K.mesh, out)


@dataclass
class MonotoneOptions:
    """Knobs for the monotone iteration."""

    step_tol: float = 1e-10       # sup-norm of consecutive iterates
    residual_tol: float = 1e-6    # final verification tolerance
    max_iter: int = 20_000
    inner_tol: float = 1e-13
    mono_slack: float = 1e-12     # tolerated pointwise violation
    shift: str | float = "auto"   # "auto", 0.0, or an explicit value
    eig: EigenPair | None = None


def _rhs(params: ProblemParams, vals: np.ndarray) -> np.ndarray:
    out = params.lam * vals ** (-params.q)
    if params.mode == "full":
        out = out + vals ** params.alpha
    return out


def _auto_shift(params: ProblemParams, m: float) -> float:
    # smallest c with f(t) + c t nondecreasing on [m, inf)
    c = params.q * params.lam * m ** (-params.q - 1.0)
    if params.mode == "full":
        c -= params.alpha * m ** (params.alpha - 1.0)
    return max(0.0, c)


def monotone_iterate(K: KernelWeights, params: ProblemParams, interval: OrderInterval,
                     opts: MonotoneOptions | None = None) -> SolveReport:
    """Increase the sub-solution to the minimal enclosed solution.

    Each step solves the shifted frozen-right-hand-side problem; the shift is
    recomputed from the current iterate's minimum so the composite map is
    order-preserving on the interval (``shift=0.0`` reproduces the raw step).
    Pointwise monotonicity and the upper bound are asserted every step.

    Raises:
        EmptyInterval: if the interval is invalid.
        MonotonicityViolation: if an iterate decreases somewhere or overshoots
            the upper endpoint beyond the slack (reported with node index).
        NotConverged: if the step tolerance is not reached in ``max_iter``.
    """
    opts = opts or MonotoneOptions()
    interval = make_interval(interval.lower, interval.upper)
    u = interval.lower.values.copy()
    up = interval.upper.values
    trace = [(0, 0.0, energy(K, params, interval.lower))]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        if opts.shift == "auto":
            c = _auto_shift(params, float(np.min(u)))
        else:
            c = float(opts.shift)
        rhs = _rhs(params, u) + c * u
        unew = solve_operator_equation(K, rhs, shift=c, tol=opts.inner_tol)
        drop = float(np.max(u - unew))
        if drop > opts.mono_slack:
            node = int(np.argmax(u - unew))
            raise MonotonicityViolation(
                f"iterate decreased by {drop:.3e} at node {node}", node=node, magnitude=drop)
        over = float(np.max(unew - up))
        if over > opts.mono_slack:
            node = int(np.argmax(unew - up))
            raise MonotonicityViolation(
                f"iterate overshot the super-solution by {over:.3e} at node {node}",
                node=node, magnitude=over)
        step = float(np.max(np.abs(unew - u)))
        u = unew
        trace.append((it, step, energy(K, params, DiscreteFunction(K.mesh, u))))
        if step < opts.step_tol:
            converged = True
            break
    if not converged:
        raise NotConverged(f"monotone iteration did not settle in {opts.max_iter} steps")
    uf = DiscreteFunction(K.mesh, u)
    eig = opts.eig or principal_eigenpair(K)
    check = verify_solution(K, params, uf, tol=opts.residual_tol, eig=eig)
    return SolveReport(
        u=uf,
        energy=energy(K, params, uf),
        residual=check.residual,
        nehari_class=_classify(K, params, uf),
        t_projection_trace=trace,
        lower_bound_ok=check.lower_bound_ok,
        iterations=it,
        converged=bool(converged and check.ok),
        eta=check.eta,
        barrier_margin=check.barrier_margin,
        method="monotone",
    )


@dataclass
class BoxOptions:
    """Knobs for box-constrained minimization."""

    kkt_tol: float = 1e-8        # free-node gradient tolerance (relative)
    max_iter: int = 50_000
    eig: EigenPair | None = None


def box_minimize(K: KernelWeights, params: ProblemParams, interval: OrderInterval,
                 opts: BoxOptions | None = None) -> SolveReport:
    """Minimize the objective over the order interval by projected descent.

    Diagonally preconditioned gradient steps are clipped back into the box;
    the objective never increases.  Exit is KKT-style: free nodes carry a
    small gradient, clipped nodes a correctly signed one.

    Raises:
        EmptyInterval: if the interval is invalid.
        NotConverged: if the KKT test is not met within the budget.
    """
    opts = opts or BoxOptions()
    interval = make_interval(interval.lower, interval.upper)
    lo = interval.lower.values
    up = interval.upper.values
    h = K.mesh.h
    e_lo = energy(K, params, interval.lower)
    e_up = energy(K, params, interval.upper)
    u = lo.copy() if e_lo <= e_up else up.copy()
    e = min(e_lo, e_up)
    trace = [(0, 0.0, e)]
    step = 1.0
    converged = False
    it = 0
    box_eps = 1e-12 * max(1.0, float(np.max(up)))
    for it in range(1, opts.max_iter + 1):
        res_norm, g = _weak_residual(K, params, u)
        au_scale = max(1.0, float(np.max(np.abs(apply_fplap(K, DiscreteFunction(K.mesh, u)).values))))
        gtol = opts.kkt_tol * au_scale
        free = (u > lo + box_eps) & (u < up - box_eps)
        at_lo = ~free & (u <= lo + box_eps)
        at_up = ~free & (u >= up - box_eps)
        if (np.all(np.abs(g[free]) <= gtol) if free.any() else True) \
                and np.all(g[at_lo] >= -gtol) and np.all(g[at_up] <= gtol):
            converged = True
            break
        # diagonal of the objective Hessian, clipped positive, as preconditioner
        diag = np.diag(hessian_seminorm(K, DiscreteFunction(K.mesh, u))) / (params.p * h)
        diag = diag + params.lam * params.q * u ** (-params.q - 1.0)
        if params.mode == "full":
            diag = diag - params.alpha * u ** (params.alpha - 1.0)
        diag = np.maximum(diag, 1e-8 * float(np.max(np.abs(diag))) + 1e-300)
        d = g / diag
        accepted = False
        trial = step
        for _ in range(60):
            cand = np.clip(u - trial * d, lo, up)
            e_c = energy(K, params, DiscreteFunction(K.mesh, cand))
            slope = h * float(g @ (cand - u))
            if e_c <= e + 1e-4 * slope:
                u, e = cand, e_c
                trace.append((it, trial, e))
                accepted = True
                step = min(trial * 2.0, 64.0)
                break
            trial *= 0.5
        if not accepted:
            # first-order stall: accept if the KKT test already holds loosely
            converged = bool(np.all(np.abs(g[free]) <= gtol) if free.any() else True)
            break
    if not converged:
        raise NotConverged(f"box minimization did not meet the KKT test in {opts.max_iter} steps")
    uf = DiscreteFunction(K.mesh, u)
    eig = opts.eig or principal_eigenpair(K)
    check = verify_solution(K, params, uf, tol=math.inf, eig=eig)
    return SolveReport(
        u=uf,
        energy=e,
        residual=check.residual,
        nehari_class=_classify(K, params, uf),
        t_projection_trace=trace,
        lower_bound_ok=check.lower_bound_ok,
        iterations=it,
        converged=converged,
        eta=check.eta,
        barrier_margin=check.barrier_margin,
        method="box",
    )


def minimize_pure_singular(K: KernelWeights, params: ProblemParams,
                           opts: SolveOptions | None = None) -> SolveReport:
    """Global minimizer of the coercive singular-only objective.

    The objective is strictly convex on the positive cone for p >= 2 and
    0 < q < 1, so damped Newton from the scaled-eigenfunction sub-solution
    (with a positivity floor at half that barrier) finds the unique minimum.

    Raises:
        InvalidMode: unless ``params.mode == "pure_singular"``.
        NotConverged: if the residual tolerance is not met.
    """
    opts = opts or SolveOptions()
    if params.mode != "pure_singular":
        raise InvalidMode("minimize_pure_singular requires mode='pure_singular'")
    if params.lam <= 0.0:
        raise InvalidParams("pure singular problem needs lambda > 0")
    eig = opts.eig or principal_eigenpair(K)
    h = K.mesh.h
    n = K.mesh.N
    sub = build_subsolution(params, eig)
    floor = opts.floor_delta * sub.values
    u = sub.values.copy()
    e = energy(K, params, DiscreteFunction(K.mesh, u))
    trace = [(0, 1.0, e)]
    converged = False
    res = math.inf
    it = 0
    import scipy.linalg as sla
    for it in range(1, opts.max_outer + 1):
        res, g = _weak_residual(K, params, u)
        if res <= opts.tol_residual:
            converged = True
            break
        hess = hessian_seminorm(K, DiscreteFunction(K.mesh, u)) / (params.p * h)
        hess += np.diag(params.lam * params.q * u ** (-params.q - 1.0))
        d = sla.cho_solve(sla.cho_factor(hess + 1e-14 * np.eye(n)), -g)
        kappa = 1.0
        accepted = False
        for _ in range(60):
            cand = np.maximum(u + kappa * d, floor)
            e_c = energy(K, params, DiscreteFunction(K.mesh, cand))
            res_c, _ = _weak_residual(K, params, cand)
            if e_c < e or res_c < res * (1.0 - 1e-4 * kappa):
                u, e = cand, e_c
                trace.append((it, kappa, e))
                accepted = True
                break
            kappa *= 0.5
        if not accepted:
            res, _ = _weak_residual(K, params, u)
            converged = res <= opts.tol_residual
            break
    if not converged:
        raise NotConverged(
            f"pure-singular minimization stalled at residual {res:.3e} after {it} iterations")
    uf = DiscreteFunction(K.mesh, u)
    margin = float(np.min(u - sub.values))
    return SolveReport(
        u=uf,
        energy=e,
        residual=res,
        nehari_class=_classify(K, params, uf),
        t_projection_trace=trace,
        lower_bound_ok=bool(margin >= -1e-10),
        iterations=it,
        converged=converged,
        eta=float(np.max(sub.values)),
        barrier_margin=margin,
        method="pure_singular",
    )


@dataclass
class SweepRow:
    """One attempted parameter value of a sweep."""

    lam: float
    succeeded: bool
    iterations: int
    energy: float
    sup_norm: float
    residual: float
    note: str = ""


@dataclass
class SweepResult:
    """Grid outcomes, bisection refinements and the estimated breakdown value."""

    rows: list
    refined: list
    lambda_hat: float
    bracket: tuple[float, float]
    message: str = ""


@dataclass
class SweepOptions:
    """Knobs for the parameter sweep."""

    bisect_steps: int = 20
    residual_tol: float = 1e-6
    solve: SolveOptions | None = None
    monotone: MonotoneOptions | None = None


def lambda_sweep(K: KernelWeights, params_base: ProblemParams, lambda_grid,
                 opts: SweepOptions | None = None) -> SweepResult:
    """Map the solvable parameter range and refine its upper edge.

    The grid is processed in decreasing order.  A value with a previously
    successful larger parameter reuses that solution as a super-solution (a
    solution at larger lambda super-solves all smaller ones); otherwise the
    ray-minimum solver bootstraps one at the current value.  A validated
    sub-solution plus monotone iteration then certifies success; any failure
    along the way is recorded as data.  The edge between the largest success
    and the smallest failure is refined by bisection.
    """
    opts = opts or SweepOptions()
    grid = [float(v) for v in lambda_grid]
    if any(v <= 0.0 for v in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidParams("lambda grid must be positive and strictly increasing")
    eig = principal_eigenpair(K)
    sopts = opts.solve or SolveOptions(tol_residual=1e-8, max_outer=3000, eig=eig)
    if sopts.eig is None:
        sopts.eig = eig
    mopts = opts.monotone or MonotoneOptions(eig=eig)
    if mopts.eig is None:
        mopts.eig = eig
    successes: dict[float, DiscreteFunction] = {}

    def attempt(lam: float) -> SweepRow:
        params = replace(params_base, lam=lam)
        above = sorted(l0 for l0 in successes if l0 > lam)
        try:
            if above:
                upper = successes[above[0]]
                boot_iters = 0
            else:
                rep = minimize_plus(K, params, opts=sopts)
                upper = rep.u
                boot_iters = rep.iterations
                if rep.residual > opts.residual_tol:
                    return SweepRow(lam, False, boot_iters, math.nan, math.nan,
                                    rep.residual, note="bootstrap residual too large")
            lower = build_subsolution(params, eig, upper)
            mrep = monotone_iterate(K, params, OrderInterval(lower, upper), mopts)
        except (NoTwoRoots, NotConverged, EmptyInterval, MonotonicityViolation) as ex:
            return SweepRow(lam, False, 0, math.nan, math.nan, math.nan,
                            note=type(ex).__name__)
        ok = mrep.converged and mrep.residual <= opts.residual_tol
        if ok:
            successes[lam] = mrep.u
        return SweepRow(lam, ok, mrep.iterations + boot_iters, mrep.energy,
                        mrep.u.sup_norm, mrep.residual)

    rows = {lam: None for lam in grid}
    for lam in sorted(grid, reverse=True):
        rows[lam] = attempt(lam)
    ordered = [rows[lam] for lam in grid]

    succ = [r.lam for r in ordered if r.succeeded]
    fail = [r.lam for r in ordered if not r.succeeded]
    refined: list[SweepRow] = []
    if not succ:
        return SweepResult(ordered, refined, 0.0, (0.0, min(fail) if fail else math.inf),
                           message="no grid value succeeded")
    if not fail:
        return SweepResult(ordered, refined, math.inf, (max(succ), math.inf),
                           message="every grid value succeeded; breakdown not bracketed")
    lo, hi = max(succ), min(fail)
    for _ in range(opts.bisect_steps):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        row = attempt(mid)
        refined.append(row)
        if row.succeeded:
            lo = mid
        else:
            hi = mid
    return SweepResult(ordered, refined, lo, (lo, hi))
