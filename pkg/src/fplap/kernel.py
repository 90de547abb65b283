"""Dense pairwise kernel weights, the nonlocal p-energy, its operator and objective.

The discrete energy of a nodal function counts every ordered interaction that
touches the domain: both orderings of interior node pairs plus the interaction
of each node with the two unbounded complement half-lines, for which the kernel
integral has a closed form.  Conventions are fixed so that the operator is
exactly the (cell-width scaled) gradient of ``seminorm_p / p`` with respect to
the nodal values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .domain import DiscreteFunction, Mesh, build_mesh
from .errors import InvalidParams, MeshMismatch, NonPositiveValue, SingularLog


@dataclass(frozen=True)
class ProblemParams:
    """Model parameters with the standing assumptions enforced at construction.

    ``mode`` selects the right-hand side: ``"full"`` keeps both the singular
    and the growth term, ``"pure_singular"`` drops the growth term (``alpha``
    is then ignored).
    """

    s: float
    p: float
    q: float
    alpha: float
    lam: float
    mode: str = "full"

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise InvalidParams(f"requires s in (0, 1), got s = {self.s}")
        if self.p < 2.0:
            raise InvalidParams(f"requires p >= 2, got p = {self.p}")
        if self.s * self.p >= 1.0:
            raise InvalidParams(
                f"requires n > sp: s*p = {self.s * self.p} >= 1 in one dimension")
        if not 0.0 < self.q <= 1.0:
            raise InvalidParams(f"requires 0 < q <= 1, got q = {self.q}")
        if self.lam < 0.0:
            raise InvalidParams(f"requires lambda >= 0, got {self.lam}")
        if self.mode not in ("full", "pure_singular"):
            raise InvalidParams(f"unknown mode {self.mode!r}")
        if self.mode == "full":
            if not self.p - 1.0 < self.alpha <= self.p_star - 1.0:
                raise InvalidParams(
                    "requires p - 1 < alpha <= p*_s - 1 = "
                    f"{self.p_star - 1.0}, got alpha = {self.alpha}")
        elif not self.q < 1.0:
            raise InvalidParams("pure singular mode requires 0 < q < 1")

    @property
    def p_star(self) -> float:
        # critical exponent, one space dimension
        return self.p / (1.0 - self.s * self.p)


@dataclass(frozen=True)
class KernelWeights:
    """Pairwise interaction weights and complement-interaction coefficients.

    ``w[i, j] = h^2 / |x_i - x_j|^(1 + s*p)`` off the diagonal and zero on it;
    ``zeta[i]`` is the exact integral of the kernel over both complement
    half-lines against node ``i``.  Immutable after construction; derived
    factorizations are cached on first use.
    """

    mesh: Mesh
    s: float
    p: float
    w: np.ndarray
    zeta: np.ndarray

    @cached_property
    def quad_form(self) -> np.ndarray:
        """Symmetric positive-definite matrix of the quadratic (p = 2) energy form."""
        d = self.w.sum(axis=1) + self.mesh.h * self.zeta
        return 2.0 * (np.diag(d) - self.w)

    @cached_property
    def quad_cho(self):
        """Cached Cholesky factorization of :attr:`quad_form`."""
        return sla.cho_factor(self.quad_form)


def build_kernel(mesh: Mesh, s: float, p: float) -> KernelWeights:
    """Assemble the dense pairwise weights and complement coefficients.

    Cost is O(N^2).  The diagonal (same-cell) interaction is dropped; its
    neglected contribution vanishes under refinement because ``p - s*p > 1``.

    Raises:
        InvalidParams: if ``s`` is outside (0, 1), ``p < 2`` or ``s*p >= 1``.
    """
    if not 0.0 < s < 1.0:
        raise InvalidParams(f"requires s in (0, 1), got s = {s}")
    if p < 2.0:
        raise InvalidParams(f"requires p >= 2, got p = {p}")
    if s * p >= 1.0:
        raise InvalidParams(f"requires n > sp: s*p = {s * p} >= 1 in one dimension")
    x = mesh.nodes
    h = mesh.h
    sp = s * p
    diff = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(diff, np.inf)
    w = h * h / diff ** (1.0 + sp)
    np.fill_diagonal(w, 0.0)
    # exact antiderivative of the kernel over (-inf, a) and (b, inf)
    zeta = ((x - mesh.a) ** (-sp) + (mesh.b - x) ** (-sp)) / sp
    return KernelWeights(mesh, float(s), float(p), w, zeta)


def _check_mesh(K: KernelWeights, u: DiscreteFunction) -> None:
    if u.mesh != K.mesh:
        raise MeshMismatch("function and kernel weights live on different meshes")


def _check_params(K: KernelWeights, params: ProblemParams) -> None:
    if params.s != K.s or params.p != K.p:
        raise InvalidParams(
            f"kernel built for (s, p) = ({K.s}, {K.p}) but params carry ({params.s}, {params.p})")


def _phi_p(t: np.ndarray, p: float) -> np.ndarray:
    """Odd p-homogeneous map |t|^(p-2) t."""
    if p == 2.0:
        return t
    return np.abs(t) ** (p - 2.0) * t


def seminorm_p(K: KernelWeights, u: DiscreteFunction) -> float:
    """p-th power of the nonlocal energy norm of ``u``.

    Sums both orderings of every interior pair plus twice the complement
    interaction; zero exactly for the zero function.
    """
    _check_mesh(K, u)
    vals = u.values
    du = vals[:, None] - vals[None, :]
    pair = float(np.sum(K.w * np.abs(du) ** K.p))
    tail = 2.0 * K.mesh.h * float(np.dot(K.zeta, np.abs(vals) ** K.p))
    return pair + tail


def apply_fplap(K: KernelWeights, u: DiscreteFunction) -> DiscreteFunction:
    """Discrete nonlocal p-Laplacian of ``u``.

    Defined as the gradient of ``seminorm_p / p`` with respect to the nodal
    values, divided by the cell width, so that
    ``h * sum_i (Au)_i v_i = d/de seminorm_p(u + e v)|_0 / p`` for every ``v``.
    """
    _check_mesh(K, u)
    vals = u.values
    du = vals[:, None] - vals[None, :]
    pair = np.sum(K.w * _phi_p(du, K.p), axis=1)
    out = (2.0 / K.mesh.h) * (pair + K.mesh.h * K.zeta * _phi_p(vals, K.p))
    return DiscreteFunction(u.mesh, out)


def hessian_seminorm(K: KernelWeights, u: DiscreteFunction) -> np.ndarray:
    """Dense Hessian of ``seminorm_p`` at ``u`` (positive semidefinite for p >= 2)."""
    _check_mesh(K, u)
    p = K.p
    vals = u.values
    if p == 2.0:
        return 2.0 * K.quad_form
    du = np.abs(vals[:, None] - vals[None, :])
    wu = K.w * du ** (p - 2.0)
    d = wu.sum(axis=1) + K.mesh.h * K.zeta * np.abs(vals) ** (p - 2.0)
    return 2.0 * p * (p - 1.0) * (np.diag(d) - wu)


def energy(K: KernelWeights, params: ProblemParams, u: DiscreteFunction) -> float:
    """Full objective: ``seminorm_p/p`` minus the singular and growth potentials.

    The singular potential uses ``|u|^(1-q)/(1-q)`` for ``q < 1`` and
    ``log|u|`` for ``q = 1``; in ``pure_singular`` mode the growth term is
    dropped.

    Raises:
        SingularLog: if ``q = 1``, ``lam > 0`` and some nodal value vanishes.
    """
    _check_mesh(K, u)
    _check_params(K, params)
    h = K.mesh.h
    vals = u.values
    e = seminorm_p(K, u) / params.p
    if params.lam > 0.0:
        if params.q == 1.0:
            if np.any(vals == 0.0):
                raise SingularLog("logarithmic potential requires nonvanishing nodal values")
            sing = h * float(np.sum(np.log(np.abs(vals))))
        else:
            sing = h * float(np.sum(np.abs(vals) ** (1.0 - params.q))) / (1.0 - params.q)
        e -= params.lam * sing
    if params.mode == "full":
        e -= h * float(np.sum(np.abs(vals) ** (params.alpha + 1.0))) / (params.alpha + 1.0)
    return float(e)


def energy_gradient(K: KernelWeights, params: ProblemParams, u: DiscreteFunction) -> DiscreteFunction:
    """Nodal residual of the weak form at a strictly positive function.

    Component ``i`` is ``(Au)_i - lam * u_i^(-q) - u_i^alpha`` (growth term
    dropped in ``pure_singular`` mode); ``h * sum_i g_i v_i`` is the
    directional derivative of :func:`energy` at ``u`` along ``v``.

    Raises:
        NonPositiveValue: if some nodal value is not strictly positive.
    """
    _check_mesh(K, u)
    _check_params(K, params)
    vals = u.values
    if np.any(vals <= 0.0):
        raise NonPositiveValue("weak-form residual requires strictly positive nodal values")
    g = apply_fplap(K, u).values - params.lam * vals ** (-params.q)
    if params.mode == "full":
        g = g - vals ** params.alpha
    return DiscreteFunction(u.mesh, g)


def solve_operator_equation(K: KernelWeights, f: np.ndarray, shift: float = 0.0,
                            tol: float = 1e-12, maxiter: int = 60) -> np.ndarray:
    """Solve ``A u + shift * u = f`` nodally; unique by strict convexity.

    For p = 2 this is one solve with the cached factorization (or a shifted
    refactorization).  For p > 2 it runs damped Newton on the convex objective
    ``seminorm_p/p + shift/2 * h |u|_2^2 - h <f, u>`` starting from the
    quadratic-form proxy solve; every step decreases the objective.  The
    residual is measured in the max norm relative to ``max(1, max|f|)``.

    Raises:
        NotConverged: if damped Newton stalls before reaching tolerance.
    """
    from .errors import NotConverged

    h = K.mesh.h
    n = K.mesh.N
    f = np.asarray(f, dtype=float)
    scale = max(1.0, float(np.max(np.abs(f))) if n else 1.0)
    if K.p == 2.0:
        if shift == 0.0:
            return sla.cho_solve(K.quad_cho, h * f)
        return sla.cho_solve(sla.cho_factor(K.quad_form + shift * h * np.eye(n)), h * f)

    u = sla.cho_solve(sla.cho_factor(K.quad_form + shift * h * np.eye(n)), h * f)

    def objective(v):
        val = seminorm_p(K, DiscreteFunction(K.mesh, v)) / K.p - h * float(f @ v)
        if shift:
            val += 0.5 * shift * h * float(v @ v)
        return val

    def residual(v):
        av = apply_fplap(K, DiscreteFunction(K.mesh, v)).values
        return av + shift * v - f

    obj = objective(u)
    res = residual(u)
    res_norm = float(np.max(np.abs(res)))
    for _ in range(maxiter):
        if res_norm <= tol * scale:
            return u
        hess = hessian_seminorm(K, DiscreteFunction(K.mesh, u)) / K.p
        if shift:
            hess = hess + shift * h * np.eye(n)
        mu = 1e-14 * (np.trace(hess) / n + 1.0)
        for _ in range(8):
            try:
                factor = sla.cho_factor(hess + mu * np.eye(n))
                break
            except sla.LinAlgError:
                mu *= 1e4
        else:
            raise NotConverged("operator-equation Hessian could not be regularized")
        d = sla.cho_solve(factor, -h * res)
        slope = h * float(res @ d)
        kappa = 1.0
        accepted = False
        for _ in range(60):
            v = u + kappa * d
            res_v = residual(v)
            res_v_norm = float(np.max(np.abs(res_v)))
            # the objective decrease drops below float resolution long before
            # the residual does, so accept on either criterion
            obj_v = objective(v)
            if (res_v_norm <= (1.0 - 1e-4 * kappa) * res_norm
                    or obj_v <= obj + 1e-4 * kappa * slope):
                u, obj, res, res_norm = v, obj_v, res_v, res_v_norm
                accepted = True
                break
            kappa *= 0.5
        if not accepted:
            break
    if res_norm <= tol * scale:
        return u
    raise NotConverged(f"damped Newton stalled solving the operator equation (p = {K.p})")


# --- binary cache -----------------------------------------------------------
#
# Layout: magic "FPLK", version u32, then (a, b) f64, N u32, (s, p) f64,
# followed by the row-major N*N weight array and the N zeta values, all
# little-endian 64-bit floats.

_CACHE_MAGIC = b"FPLK"
_CACHE_VERSION = 1
_HEADER = "<4sIddIdd"


def save_kernel_cache(K: KernelWeights, path) -> None:
    """Write the weights to a binary cache file keyed by (a, b, N, s, p)."""
    header = struct.pack(_HEADER, _CACHE_MAGIC, _CACHE_VERSION,
                         K.mesh.a, K.mesh.b, K.mesh.N, K.s, K.p)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(K.w, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(K.zeta, dtype="<f8").tobytes())


def load_kernel_cache(path) -> KernelWeights:
    """Read weights written by :func:`save_kernel_cache`.

    Raises:
        InvalidParams: on bad magic, unsupported version or truncated payload.
    """
    with open(path, "rb") as f:
        blob = f.read()
    hdr = struct.calcsize(_HEADER)
    if len(blob) < hdr:
        raise InvalidParams("kernel cache file truncated")
    magic, version, a, b, N, s, p = struct.unpack_from(_HEADER, blob, 0)
    if magic != _CACHE_MAGIC:
        raise InvalidParams("not a kernel cache file")
    if version != _CACHE_VERSION:
        raise InvalidParams(f"unsupported kernel cache version {version}")
    need = hdr + 8 * (N * N + N)
    if len(blob) != need:
        raise InvalidParams(f"kernel cache payload has {len(blob)} bytes, expected {need}")
    w = np.frombuffer(blob, dtype="<f8", count=N * N, offset=hdr).reshape(N, N)
    zeta = np.frombuffer(blob, dtype="<f8", count=N, offset=hdr + 8 * N * N)
    mesh = build_mesh(a, b, N)
    return KernelWeights(mesh, float(s), float(p), w.astype(float), zeta.astype(float))
