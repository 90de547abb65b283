"""Uniform interval mesh and nodal functions extended by zero outside the domain.

Quadrature is the midpoint rule over the interior cells.  Functions are
identified with their interior nodal values; the exterior extension by zero is
implicit everywhere, so nodal sums times the cell width realize every integral
in the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import InvalidDomain, InvalidExponent, MeshMismatch, NonFiniteValue


@dataclass(frozen=True)
class Mesh:
    """Uniform grid of ``N`` interior nodes on the open interval ``(a, b)``.

    The cell width is ``h = (b - a)/(N + 1)`` and node ``i`` (1-based) sits at
    ``a + i*h``, so all nodes are strictly interior.
    """

    a: float
    b: float
    N: int

    def __post_init__(self):
        if not self.b > self.a:
            raise InvalidDomain(f"right endpoint must exceed left endpoint, got ({self.a}, {self.b})")
        if self.N < 8:
            raise InvalidDomain(f"need at least 8 interior nodes, got {self.N}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.N + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.a + self.h * np.arange(1, self.N + 1)


def build_mesh(a: float, b: float, N: int) -> Mesh:
    """Uniform mesh with ``N`` interior nodes on ``(a, b)``."""
    return Mesh(float(a), float(b), int(N))


@dataclass(frozen=True)
class DiscreteFunction:
    """Nodal values at the interior mesh points; identically zero elsewhere."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.N,):
            raise MeshMismatch(f"expected {self.mesh.N} nodal values, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    def with_values(self, values) -> "DiscreteFunction":
        return DiscreteFunction(self.mesh, values)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def zeros(mesh: Mesh) -> DiscreteFunction:
    return DiscreteFunction(mesh, np.zeros(mesh.N))


def interpolate(mesh: Mesh, fn: Callable[[np.ndarray], np.ndarray]) -> DiscreteFunction:
    """Nodal interpolant of a callable evaluated at the mesh nodes."""
    return DiscreteFunction(mesh, np.asarray(fn(mesh.nodes), dtype=float))


def require_same_mesh(u: DiscreteFunction, v: DiscreteFunction) -> None:
    if u.mesh != v.mesh:
        raise MeshMismatch("operands live on different meshes")


def integrate(u: DiscreteFunction, g: Callable) -> float:
    """Midpoint-rule integral of ``g(u)`` over the domain.

    ``g`` is applied to the nodal values (vectorized when it accepts arrays,
    elementwise otherwise).  The zero exterior extension contributes nothing,
    so the sum runs over interior cells only.

    Raises:
        NonFiniteValue: if ``g`` is not finite at some nodal value.
    """
    try:
        gv = np.asarray(g(u.values), dtype=float)
        if gv.shape != u.values.shape:
            raise TypeError
    except (TypeError, ValueError):
        gv = np.array([float(g(v)) for v in u.values])
    if not np.all(np.isfinite(gv)):
        raise NonFiniteValue("integrand is not finite at every node")
    return float(u.mesh.h * gv.sum())


def norm_lp(u: DiscreteFunction, beta: float) -> float:
    """Discrete Lebesgue norm ``(h * sum |u_i|^beta)^(1/beta)`` for ``beta > 0``."""
    if not beta > 0:
        raise InvalidExponent(f"Lebesgue exponent must be positive, got {beta}")
    return float((u.mesh.h * np.sum(np.abs(u.values) ** beta)) ** (1.0 / beta))
