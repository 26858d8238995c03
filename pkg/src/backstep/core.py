"""Grids, sampled fields, quadrature, norms and Volterra operators on [0, 1].

Every field in the package lives on a :class:`UniformGrid`. One-variable
functions are :class:`ScalarField1D`; two-variable kernels on the triangle
``0 <= xi <= x <= 1`` are :class:`TriangularField`, stored as a dense
lower-triangular ``(n, n)`` array whose strict upper part is zero.

All integrals use the composite trapezoid rule, which is exact for the
piecewise-linear interpolant the fields represent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Literal, Optional, Union

import numpy as np

from .errors import InvalidArgument, NumericFailure

__all__ = [
    "UniformGrid",
    "ScalarField1D",
    "TriangularField",
    "L2Norm",
    "H1Norm",
    "WeightedExp",
    "NormKind",
    "L2",
    "H1",
    "make_uniform_grid",
    "quad_trapezoid",
    "norm",
    "derivative",
    "volterra_apply",
    "volterra_invert",
    "volterra_solve",
    "compose",
    "check_same_grid",
    "convergence_threshold",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class UniformGrid:
    """Uniform grid on [0, 1] with ``n`` nodes (``n >= 2``)."""

    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise InvalidArgument(f"grid needs an integer n >= 2, got {self.n!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        # i / (n - 1) keeps both endpoints exact (no accumulated drift)
        x = np.arange(self.n, dtype=float) / (self.n - 1)
        x.setflags(write=False)
        return x

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        """Row ``i`` holds the trapezoid weights for an integral over [0, x_i]."""
        n, h = self.n, self.h
        w = np.tril(np.full((n, n), h))
        w[np.arange(n), np.arange(n)] = 0.5 * h
        w[:, 0] = 0.5 * h
        w[0, 0] = 0.0
        w.setflags(write=False)
        return w

    @cached_property
    def tail_weights(self) -> np.ndarray:
        """Row ``j`` holds the trapezoid weights for an integral over [xi_j, 1]."""
        n, h = self.n, self.h
        w = np.triu(np.full((n, n), h))
        w[np.arange(n), np.arange(n)] = 0.5 * h
        w[:, -1] = 0.5 * h
        w[-1, -1] = 0.0
        w.setflags(write=False)
        return w

    @cached_property
    def full_weights(self) -> np.ndarray:
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.setflags(write=False)
        return w


def make_uniform_grid(n: int) -> UniformGrid:
    return UniformGrid(n)


def check_same_grid(*fields) -> UniformGrid:
    grids = {f.grid for f in fields}
    if len(grids) != 1:
        raise InvalidArgument(
            "fields live on different grids: " + ", ".join(str(g.n) for g in grids)
        )
    return grids.pop()


@dataclass(frozen=True, eq=False)
class ScalarField1D:
    """Nodal samples of a function on [0, 1], evaluated by linear interpolation."""

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = _frozen(self.values)
        if v.shape != (self.grid.n,):
            raise InvalidArgument(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: UniformGrid, fn: Callable) -> "ScalarField1D":
        vals = np.broadcast_to(np.asarray(fn(grid.nodes), dtype=float), (grid.n,))
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: UniformGrid, value: float) -> "ScalarField1D":
        return cls(grid, np.full(grid.n, float(value)))

    def __call__(self, x):
        return np.interp(x, self.grid.nodes, self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __add__(self, other: "ScalarField1D") -> "ScalarField1D":
        check_same_grid(self, other)
        return ScalarField1D(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField1D") -> "ScalarField1D":
        check_same_grid(self, other)
        return ScalarField1D(self.grid, self.values - other.values)

    def scaled(self, a: float) -> "ScalarField1D":
        return ScalarField1D(self.grid, a * self.values)


@dataclass(frozen=True, eq=False)
class TriangularField:
    """Samples on the closed triangle ``{0 <= xi <= x <= 1}``.

    ``values[i, j]`` is the value at ``(x_i, xi_j)`` for ``j <= i``; entries
    with ``j > i`` are forced to zero so matrix products act as Volterra sums.
    """

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        n = self.grid.n
        if v.shape != (n, n):
            raise InvalidArgument(f"expected ({n}, {n}) values, got shape {v.shape}")
        v = np.tril(v)
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("kernel values must be finite on the triangle")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: UniformGrid, fn: Callable) -> "TriangularField":
        x = grid.nodes[:, None]
        xi = grid.nodes[None, :]
        vals = np.broadcast_to(np.asarray(fn(x, xi), dtype=float), (grid.n, grid.n))
        return cls(grid, np.tril(vals))

    @classmethod
    def zeros(cls, grid: UniformGrid) -> "TriangularField":
        return cls(grid, np.zeros((grid.n, grid.n)))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def diagonal(self) -> ScalarField1D:
        return ScalarField1D(self.grid, np.diag(self.values).copy())

    def bottom(self) -> ScalarField1D:
        """Trace ``xi = 0`` as a function of x."""
        return ScalarField1D(self.grid, self.values[:, 0].copy())

    def top(self) -> ScalarField1D:
        """Trace ``x = 1`` as a function of xi (the control gain)."""
        return ScalarField1D(self.grid, self.values[-1, :].copy())

    def row_scaled(self, a: ScalarField1D) -> "TriangularField":
        """Return ``a(x) * self(x, xi)``."""
        check_same_grid(self, a)
        return TriangularField(self.grid, a.values[:, None] * self.values)


@dataclass(frozen=True)
class L2Norm:
    pass


@dataclass(frozen=True)
class H1Norm:
    pass


@dataclass(frozen=True)
class WeightedExp:
    """Weighted energy ``int exp(sign * c * x) f^2 / divisor dx`` (not square-rooted)."""

    c: float
    sign: int = 1
    divisor: Optional[ScalarField1D] = None

    def __post_init__(self) -> None:
        if self.sign not in (1, -1):
            raise InvalidArgument("sign must be +1 or -1")
        if self.divisor is not None and np.min(self.divisor.values) <= 0:
            raise InvalidArgument("divisor must be strictly positive")


NormKind = Union[L2Norm, H1Norm, WeightedExp]
L2 = L2Norm()
H1 = H1Norm()


def quad_trapezoid(f: ScalarField1D, a: float = 0.0, b: float = 1.0) -> float:
    """Composite trapezoid value of the integral of ``f`` over ``[a, b]``.

    Off-node limits cut the end cells and use the linear interpolant there, so
    the result is exact for any grid-aligned piecewise-linear integrand.
    """
    if a > b:
        raise InvalidArgument(f"integration limits out of order: a={a} > b={b}")
    if a < 0.0 or b > 1.0:
        raise InvalidArgument(f"limits must lie in [0, 1], got [{a}, {b}]")
    if a == b:
        return 0.0
    x = f.grid.nodes
    if a == 0.0 and b == 1.0:
        # compensated sum divided by n - 1 keeps linear integrands exact
        v = f.values
        return math.fsum(np.concatenate((v[1:-1], 0.5 * v[[0, -1]]))) / (f.grid.n - 1)
    inner = x[(x > a) & (x < b)]
    pts = np.concatenate(([a], inner, [b]))
    return float(np.trapezoid(np.interp(pts, x, f.values), pts))


def derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Second-order centred differences, one-sided second order at the ends."""
    if values.shape[-1] < 3:
        raise InvalidArgument("derivative needs at least 3 nodes")
    return np.gradient(values, h, axis=-1, edge_order=2)


def norm(f: ScalarField1D, kind: NormKind = L2) -> float:
    g = f.grid
    if isinstance(kind, L2Norm):
        return float(np.sqrt(g.full_weights @ f.values**2))
    if isinstance(kind, H1Norm):
        if g.n < 3:
            raise InvalidArgument("H1 norm needs a grid with n >= 3")
        fx = derivative(f.values, g.h)
        return float(np.sqrt(g.full_weights @ (f.values**2 + fx**2)))
    if isinstance(kind, WeightedExp):
        integrand = np.exp(kind.sign * kind.c * g.nodes) * f.values**2
        if kind.divisor is not None:
            check_same_grid(f, kind.divisor)
            integrand = integrand / kind.divisor.values
        return float(g.full_weights @ integrand)
    raise InvalidArgument(f"unknown norm kind {kind!r}")


def volterra_apply(
    K: TriangularField,
    f: ScalarField1D,
    direction: Literal["forward", "inverse"] = "forward",
) -> ScalarField1D:
    """``f(x) -/+ int_0^x K(x, xi) f(xi) dxi`` (minus for forward, plus for inverse)."""
    g = check_same_grid(K, f)
    integral = (g.trapezoid_weights * K.values) @ f.values
    if direction == "forward":
        return ScalarField1D(g, f.values - integral)
    if direction == "inverse":
        return ScalarField1D(g, f.values + integral)
    raise InvalidArgument(f"direction must be 'forward' or 'inverse', got {direction!r}")


def compose(A: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid values of ``int_{xi_j}^{x_i} A(x_i, s) B(s, xi_j) ds`` for ``j <= i``.

    Both inputs must be lower triangular; the plain matrix product then sums
    over ``j <= s <= i`` and the half-weight end corrections finish the rule.
    """
    out = A @ B
    out -= 0.5 * A * np.diag(B)[None, :]
    out -= 0.5 * np.diag(A)[:, None] * B
    out *= h
    return np.tril(out, -1)


def convergence_threshold(tol: float, values: np.ndarray) -> float:
    """``tol``, raised to a roundoff floor when the iterate is large in magnitude."""
    return max(tol, 64 * np.finfo(float).eps * float(np.max(np.abs(values), initial=0.0)))


def volterra_solve(
    A: TriangularField,
    B: TriangularField,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> tuple[TriangularField, int, float]:
    """Successive approximation for ``X = B + int_xi^x A(x, s) X(s, xi) ds``.

    Every column is an independent second-kind Volterra equation; all columns
    are iterated together. Returns ``(X, iterations, last_sup_difference)``.
    """
    g = check_same_grid(A, B)
    a, b = A.values, B.values
    x = b.copy()
    diff = np.inf
    for it in range(1, max_iter + 1):
        x_new = b + compose(a, x, g.h)
        diff = float(np.max(np.abs(x_new - x)))
        x = x_new
        if not np.isfinite(diff):
            break
        if diff < convergence_threshold(tol, x):
            return TriangularField(g, x), it, diff
    raise NumericFailure(
        f"Volterra successive approximation did not converge in {max_iter} iterations "
        f"(last sup-difference {diff:.3e})",
        residual=diff,
    )


def volterra_invert(
    K: TriangularField, tol: float = 1e-12, max_iter: int = 200
) -> TriangularField:
    """Inverse kernel ``L`` with ``(I - K)^{-1} = I + L``.

    Solves the reciprocity relation ``L = K + int_xi^x K(x, s) L(s, xi) ds``.
    """
    L, _, _ = volterra_solve(K, K, tol=tol, max_iter=max_iter)
    return L
