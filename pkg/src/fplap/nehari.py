"""Constrained minimization on the two branches of the stationarity set.

A nonzero direction is projected onto the stationarity set by scaling with one
of the two critical scalings of its ray profile: the smaller one lands on the
branch of ray-minima ("plus"), the larger on the branch of ray-maxima
("minus").  Minimization runs preconditioned descent on the full objective
with a positivity floor, re-projecting after every step, so the objective is
non-increasing across outer iterations on both branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .domain import DiscreteFunction
from .eigen import EigenPair, principal_eigenpair
from .errors import (InvalidParams, NonPositiveValue, NoTwoRoots,
                     NotConverged, SupercriticalAlpha)
from .fiber import critical_points, evaluate_fiber, fiber_coeffs
from .kernel import (KernelWeights, ProblemParams, apply_fplap, energy,
                     seminorm_p)


@dataclass
class SolveOptions:
    """Knobs shared by the iterative solvers.

    ``eig`` may carry a precomputed eigenpair to avoid recomputation; the
    positivity floor is ``floor_delta`` times the admissible barrier.
    """

    tol_energy: float = 1e-10
    tol_residual: float = 1e-8
    max_outer: int = 10_000
    multistart: int = 8
    seed: int = 0
    floor_delta: float = 0.5
    eig: EigenPair | None = None


@dataclass
class SolveReport:
    """Outcome of a constrained or box/monotone solve.

    ``t_projection_trace`` holds ``(iteration, t, objective)`` triples, where
    ``t`` is the ray re-projection scaling for branch solvers and the sup-norm
    step for the iteration-based solvers.  ``lower_bound_ok`` checks pointwise
    domination of the scaled eigenfunction barrier at scale ``eta``.
    """

    u: DiscreteFunction
    energy: float
    residual: float
    nehari_class: str
    t_projection_trace: list
    lower_bound_ok: bool
    iterations: int
    converged: bool
    eta: float = math.nan
    barrier_margin: float = math.nan
    method: str = ""
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "residual": self.residual,
            "nehari_class": self.nehari_class,
            "lower_bound_ok": self.lower_bound_ok,
            "iterations": self.iterations,
            "converged": self.converged,
            "eta": self.eta,
            "barrier_margin": self.barrier_margin,
            "sup_norm": self.u.sup_norm,
            "method": self.method,
            "message": self.message,
            "trace": [[int(i), float(t), float(e)] for i, t, e in self.t_projection_trace],
        }


def barrier_scales(params: ProblemParams, eig: EigenPair) -> tuple[float, float]:
    """Barrier scale from the flat-region bound and the sub-solution cap.

    The first value is ``(lam q / alpha)^(1/(alpha+q))`` (largest scale whose
    multiple of the eigenfunction keeps the right-hand side nonincreasing);
    the second is ``0.99 (lam/lambda1)^(1/(p+q-1))`` (largest scale that stays
    a sub-solution through the eigen-equation).  The admissible barrier is the
    smaller of the two.
    """
    if params.mode == "full":
        eta_flat = (params.lam * params.q / params.alpha) ** (1.0 / (params.alpha + params.q))
    else:
        eta_flat = math.inf
    t_sub = 0.99 * (params.lam / eig.lambda1) ** (1.0 / (params.p + params.q - 1.0))
    return eta_flat, t_sub


def _classify(K, params, u, tol=1e-8) -> str:
    c = fiber_coeffs(K, params, u)
    _, dphi, ddphi = evaluate_fiber(c, params.lam, 1.0)
    if abs(dphi) > tol * max(1.0, c.P):
        return "none"
    return "plus" if ddphi > 0.0 else "minus"


def _project(K, params, vals: np.ndarray, branch: str) -> tuple[float, np.ndarray]:
    u = DiscreteFunction(K.mesh, vals)
    cp = critical_points(fiber_coeffs(K, params, u), params.lam)
    if cp is None:
        raise NoTwoRoots("lambda is above the two-critical-point threshold of this direction")
    t = cp.t1 if branch == "plus" else cp.t2
    return t, t * vals


def project_plus(K: KernelWeights, params: ProblemParams, u: DiscreteFunction) -> DiscreteFunction:
    """Scale ``u`` onto the ray-minimum branch of the stationarity set.

    Raises:
        NoTwoRoots: if lambda is at or above this direction's threshold.
    """
    _, vals = _project(K, params, np.abs(u.values), "plus")
    return DiscreteFunction(u.mesh, vals)


def project_minus(K: KernelWeights, params: ProblemParams, u: DiscreteFunction) -> DiscreteFunction:
    """Scale ``u`` onto the ray-maximum branch of the stationarity set.

    Raises:
        NoTwoRoots: if lambda is at or above this direction's threshold.
    """
    _, vals = _project(K, params, np.abs(u.values), "minus")
    return DiscreteFunction(u.mesh, vals)


def _weak_residual(K, params, vals) -> tuple[float, np.ndarray]:
    """Normalized max-norm weak-form residual and the raw nodal residual."""
    au = apply_fplap(K, DiscreteFunction(K.mesh, vals)).values
    g = au - params.lam * vals ** (-params.q)
    if params.mode == "full":
        g = g - vals ** params.alpha
    denom = max(float(np.max(np.abs(au))), 1e-300)
    return float(np.max(np.abs(g))) / denom, g


def _newton_polish(K, params, vals, tol_residual, maxiter=40):
    """Local Newton on the stationarity system, damped on the residual norm.

    Descent phases deliver iterates whose objective can no longer decrease in
    float arithmetic while the nodal residual is still orders of magnitude
    above tolerance; Newton closes that gap quadratically.  Iterates stay
    strictly positive.
    """
    from .kernel import hessian_seminorm

    h = K.mesh.h
    n = K.mesh.N
    res, g = _weak_residual(K, params, vals)
    for _ in range(maxiter):
        if res <= tol_residual:
            break
        jac = hessian_seminorm(K, DiscreteFunction(K.mesh, vals)) / (params.p * h)
        diag = params.lam * params.q * vals ** (-params.q - 1.0)
        if params.mode == "full":
            diag = diag - params.alpha * vals ** (params.alpha - 1.0)
        jac += np.diag(diag)
        try:
            d = sla.lu_solve(sla.lu_factor(jac), -g)
        except sla.LinAlgError:
            break
        kappa = 1.0
        accepted = False
        for _ in range(50):
            cand = vals + kappa * d
            if np.min(cand) > 0.0:
                res_c, g_c = _weak_residual(K, params, cand)
                if res_c < res * (1.0 - 1e-4 * kappa):
                    vals, res, g = cand, res_c, g_c
                    accepted = True
                    break
            kappa *= 0.5
        if not accepted:
            break
    return vals, res


def _minimize_branch(K, params, start_vals, opts: SolveOptions, branch: str) -> SolveReport:
    """Projected preconditioned descent on one branch from one start.

    Raises NoTwoRoots if the start direction is above threshold; NotConverged
    is signalled through the returned report (``converged`` False), so
    multi-start callers can keep the best attempt.
    """
    h = K.mesh.h
    eig = opts.eig
    eta_flat, t_sub = barrier_scales(params, eig)
    floor = opts.floor_delta * min(eta_flat, t_sub) * eig.phi1.values

    vals = np.maximum(np.abs(start_vals), floor)
    t, vals = _project(K, params, vals, branch)
    e = energy(K, params, DiscreteFunction(K.mesh, vals))
    trace = [(0, t, e)]
    step = 1.0
    converged = False
    res = math.inf
    it = 0
    stalled = False
    for it in range(1, opts.max_outer + 1):
        res, g = _weak_residual(K, params, vals)
        if res <= max(opts.tol_residual, 1e-4):
            break
        d = sla.cho_solve(K.quad_cho, h * g)
        accepted = False
        trial_step = step
        for _ in range(60):
            cand = np.maximum(vals - trial_step * d, floor)
            try:
                t_c, cand = _project(K, params, cand, branch)
            except NoTwoRoots:
                trial_step *= 0.5
                continue
            e_c = energy(K, params, DiscreteFunction(K.mesh, cand))
            if e_c <= e - 1e-16 * abs(e):
                vals, e, t = cand, e_c, t_c
                trace.append((it, t, e))
                accepted = True
                step = min(trial_step * 2.0, 64.0)
                break
            trial_step *= 0.5
        if not accepted:
            stalled = True
            break
    # descent delivers the branch's basin; Newton closes the residual gap that
    # float-resolution energy comparisons cannot
    vals, res = _newton_polish(K, params, vals, opts.tol_residual)
    e = energy(K, params, DiscreteFunction(K.mesh, vals))
    trace.append((it + 1, 1.0, e))
    converged = res <= opts.tol_residual
    if stalled and not converged:
        pass  # report carries the stalled residual

    u = DiscreteFunction(K.mesh, vals)
    barrier = eta_flat * eig.phi1.values
    margin = float(np.min(vals - barrier))
    return SolveReport(
        u=u,
        energy=e,
        residual=res,
        nehari_class=_classify(K, params, u),
        t_projection_trace=trace,
        lower_bound_ok=bool(margin >= -1e-10),
        iterations=it,
        converged=converged,
        eta=eta_flat,
        barrier_margin=margin,
        method=f"nehari_{branch}",
    )


def minimize_plus(K: KernelWeights, params: ProblemParams,
                  u0: DiscreteFunction | None = None,
                  opts: SolveOptions | None = None) -> SolveReport:
    """Minimize the objective on the ray-minimum branch.

    Starts from the principal eigenfunction unless ``u0`` is given.  Descent
    steps are preconditioned with the quadratic-form factorization, floored at
    a fraction of the admissible barrier, and re-projected after every step.

    Raises:
        NoTwoRoots: if lambda is above the start direction's threshold.
        NotConverged: if the joint energy/residual test is never met.
    """
    opts = opts or SolveOptions()
    if opts.eig is None:
        opts = _with_eig(K, opts)
    start = (u0.values if u0 is not None else opts.eig.phi1.values)
    report = _minimize_branch(K, params, start, opts, "plus")
    if not report.converged:
        raise NotConverged(
            f"plus-branch minimization stalled at residual {report.residual:.3e} "
            f"after {report.iterations} iterations")
    return report


def minimize_minus(K: KernelWeights, params: ProblemParams,
                   u0: DiscreteFunction | None = None,
                   opts: SolveOptions | None = None) -> SolveReport:
    """Minimize the objective on the ray-maximum branch (best of multi-start).

    The branch infimum is a min over ray maxima, so several perturbed starts
    around the eigenfunction are tried and the lowest converged objective is
    returned as best-found (no global certificate).

    Raises:
        SupercriticalAlpha: unless alpha is strictly subcritical.
        NoTwoRoots: if every start direction is above threshold.
        NotConverged: if no start converges.
    """
    opts = opts or SolveOptions()
    if params.alpha >= params.p_star - 1.0:
        raise SupercriticalAlpha(
            f"requires alpha < p*_s - 1 = {params.p_star - 1.0}, got {params.alpha}")
    if opts.eig is None:
        opts = _with_eig(K, opts)
    phi = opts.eig.phi1.values
    x = (K.mesh.nodes - K.mesh.a) / (K.mesh.b - K.mesh.a)
    starts: list[np.ndarray] = []
    if u0 is not None:
        starts.append(np.abs(u0.values))
    else:
        starts.append(phi.copy())
        for k in range(1, max(1, opts.multistart)):
            rng = np.random.default_rng([opts.seed, k])
            bump = sum(rng.standard_normal() / j ** 2 * np.sin(j * np.pi * x) for j in range(1, 6))
            starts.append(phi * (1.0 + 0.5 * np.abs(bump)))
    best: SolveReport | None = None
    roots_failed = 0
    for vals in starts:
        try:
            rep = _minimize_branch(K, params, vals, opts, "minus")
        except NoTwoRoots:
            roots_failed += 1
            continue
        if rep.converged and (best is None or rep.energy < best.energy):
            best = rep
    if best is None:
        if roots_failed == len(starts):
            raise NoTwoRoots("lambda is above the threshold of every start direction")
        raise NotConverged("no minus-branch start converged")
    return best


def _with_eig(K, opts: SolveOptions) -> SolveOptions:
    eig = principal_eigenpair(K)
    return SolveOptions(tol_energy=opts.tol_energy, tol_residual=opts.tol_residual,
                        max_outer=opts.max_outer, multistart=opts.multistart,
                        seed=opts.seed, floor_delta=opts.floor_delta, eig=eig)


@dataclass(frozen=True)
class VerifyReport:
    """Pointwise weak-form check of a candidate solution."""

    residual: float          # normalized: max nodal defect over max nodal operator value
    residual_abs: float      # max nodal defect times cell width
    ok: bool
    eta: float
    lower_bound_ok: bool
    barrier_margin: float
    sup_norm: float
    norm_p_power: float

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "residual_abs": self.residual_abs,
            "ok": self.ok,
            "eta": self.eta,
            "lower_bound_ok": self.lower_bound_ok,
            "barrier_margin": self.barrier_margin,
            "sup_norm": self.sup_norm,
            "norm_p_power": self.norm_p_power,
        }


def verify_solution(K: KernelWeights, params: ProblemParams, u: DiscreteFunction,
                    tol: float = 1e-6, eig: EigenPair | None = None) -> VerifyReport:
    """Check the weak form, the barrier bound and boundedness of a candidate.

    The residual is the max-norm nodal defect of the weak form normalized by
    the max-norm of the operator value; the barrier check compares against the
    flat-region scale of the eigenfunction with a small slack.

    Raises:
        NonPositiveValue: if some nodal value is not strictly positive.
    """
    vals = u.values
    if np.any(vals <= 0.0):
        raise NonPositiveValue("verification requires strictly positive nodal values")
    if eig is None:
        eig = principal_eigenpair(K)
    res_norm, g = _weak_residual(K, params, vals)
    eta_flat, _ = barrier_scales(params, eig)
    if math.isfinite(eta_flat):
        margin = float(np.min(vals - eta_flat * eig.phi1.values))
    else:
        margin = math.inf
    return VerifyReport(
        residual=res_norm,
        residual_abs=float(np.max(np.abs(g))) * K.mesh.h,
        ok=bool(res_norm <= tol),
        eta=eta_flat,
        lower_bound_ok=bool(margin >= -tol),
        barrier_margin=margin,
        sup_norm=u.sup_norm,
        norm_p_power=seminorm_p(K, u),
    )


def supnorm_refinement_diagnostic(solve, params: ProblemParams, a: float, b: float,
                                  N: int, factor: int = 2) -> dict:
    """Boundedness diagnostic: sup-norms of re-solves at N and factor*N nodes.

    ``solve`` maps a kernel to a solution report; the diagnostic reports both
    sup-norms and their ratio, which should stay near one for a bounded limit.
    """
    from .domain import build_mesh
    from .kernel import build_kernel

    sups = {}
    for n in (N, factor * (N + 1) - 1):
        K = build_kernel(build_mesh(a, b, n), params.s, params.p)
        rep = solve(K)
        sups[n] = rep.u.sup_norm
    (n1, s1), (n2, s2) = sorted(sups.items())
    return {"N_coarse": n1, "sup_coarse": s1, "N_fine": n2, "sup_fine": s2,
            "ratio": s2 / s1 if s1 else math.inf}
