"""Backstepping kernel for the scalar transport PIDE.

Plant::

    u_t = u_x + g(x) u(0, t) + int_0^x f(x, y) u(y, t) dy,   u(1, t) = U(t)

Kernel equations on the triangle::

    K_x + K_xi = int_xi^x K(x, s) f(s, xi) ds - f(x, xi)
    K(x, 0)    = int_0^x K(x, s) g(s) ds - g(x)

Characteristics are the lines ``x - xi = const``, which pass exactly through
grid nodes on a uniform grid, so the integral form along each line is a
cumulative trapezoid sum over a diagonal of the array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ScalarField1D,
    TriangularField,
    UniformGrid,
    check_same_grid,
    compose,
    convergence_threshold,
    volterra_invert,
)
from .errors import InvalidArgument, NumericFailure

__all__ = [
    "HyperbolicPlantSpec",
    "HyperbolicKernelSolution",
    "solve_kernel_pide",
    "hyperbolic_kernel_bound",
    "boundary_residual",
    "characteristic_residual",
]

TOL = 1e-10
MAX_ITER = 200


@dataclass(frozen=True)
class HyperbolicPlantSpec:
    f: TriangularField
    g: ScalarField1D

    def __post_init__(self) -> None:
        check_same_grid(self.f, self.g)

    @property
    def grid(self) -> UniformGrid:
        return self.g.grid


@dataclass(frozen=True)
class HyperbolicKernelSolution:
    K: TriangularField
    L: TriangularField
    gain_k1: ScalarField1D
    iterations: int
    residual: float


def _diagonal_cumtrapz(F: np.ndarray, h: float) -> np.ndarray:
    """Integrate ``F`` along each line ``i - j = const`` starting at ``j = 0``.

    Returns ``C`` with ``C[i, j] = int_0^{xi_j} F(x_i - xi_j + t, t) dt``.
    """
    n = F.shape[0]
    I, J = np.tril_indices(n)
    R = I - J
    D = np.zeros((n, n))
    D[R, J] = F[I, J]
    S = np.cumsum(D, axis=1)
    C = h * (S - 0.5 * D[:, :1] - 0.5 * D)
    C[:, 0] = 0.0
    out = np.zeros((n, n))
    out[I, J] = C[R, J]
    return out


def _bottom_data(K: np.ndarray, g: np.ndarray, grid: UniformGrid) -> np.ndarray:
    return (grid.trapezoid_weights * K) @ g - g


def solve_kernel_pide(
    plant: HyperbolicPlantSpec,
    grid: UniformGrid | None = None,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> HyperbolicKernelSolution:
    """Solve the kernel equations by successive approximation along characteristics."""
    if grid is not None and grid != plant.grid:
        raise InvalidArgument(f"plant lives on n={plant.grid.n}, solver asked for n={grid.n}")
    grid = plant.grid
    n, h = grid.n, grid.h
    f = plant.f.values
    g = plant.g.values
    has_f = bool(np.any(f))
    I, J = np.tril_indices(n)
    R = I - J

    K = np.zeros((n, n))
    diff = np.inf
    for it in range(1, max_iter + 1):
        F = compose(K, f, h) - f if has_f else np.zeros((n, n))
        bottom = _bottom_data(K, g, grid)
        K_new = _diagonal_cumtrapz(F, h)
        K_new[I, J] += bottom[R]
        diff = float(np.max(np.abs(K_new - K)))
        K = K_new
        if not math.isfinite(diff):
            break
        if diff < convergence_threshold(tol, K):
            break
    else:
        raise NumericFailure(
            f"hyperbolic kernel iteration did not converge in {max_iter} iterations "
            f"(last sup-difference {diff:.3e})",
            residual=diff,
        )
    if not math.isfinite(diff):
        raise NumericFailure("hyperbolic kernel iteration diverged", residual=diff)

    Kf = TriangularField(grid, K)
    return HyperbolicKernelSolution(
        K=Kf, L=volterra_invert(Kf), gain_k1=Kf.top(), iterations=it, residual=diff
    )


def hyperbolic_kernel_bound(B_f: float, B_g: float) -> float:
    """Sup-norm bound ``(B_f + B_g) exp(B_f + B_g)`` on both K and L."""
    if B_f < 0 or B_g < 0:
        raise InvalidArgument("coefficient bounds must be nonnegative")
    s = B_f + B_g
    return s * math.exp(s)


def boundary_residual(sol: HyperbolicKernelSolution, plant: HyperbolicPlantSpec) -> float:
    """Max violation of ``K(x, 0) = int_0^x K(x, s) g(s) ds - g(x)``."""
    K = sol.K.values
    return float(np.max(np.abs(K[:, 0] - _bottom_data(K, plant.g.values, plant.grid))))


def characteristic_residual(sol: HyperbolicKernelSolution, plant: HyperbolicPlantSpec) -> float:
    """Max mismatch between the directional difference along ``x - xi = const``
    and the midpoint average of the right-hand side."""
    grid = plant.grid
    h = grid.h
    K = sol.K.values
    f = plant.f.values
    rhs = compose(K, f, h) - f
    n = grid.n
    I, J = np.tril_indices(n - 1)
    dK = (K[I + 1, J + 1] - K[I, J]) / h
    avg = 0.5 * (rhs[I + 1, J + 1] + rhs[I, J])
    return float(np.max(np.abs(dK - avg)))
