"""Backstepping kernel for the reaction-diffusion plant ``u_t = u_xx + lambda(x) u``.

Kernel equations on the triangle, with ``a(xi) = lambda(xi) + c``::

    K_xx - K_xixi = a(xi) K
    K(x, x)       = -1/2 int_0^x a(s) ds
    K(x, 0) = 0          (Dirichlet)   or   K_xi(x, 0) = 0   (Neumann)

Reflecting K oddly (Dirichlet) or evenly (Neumann) across ``xi = 0`` turns the
bottom condition into diagonal-type data on ``xi = -x``. In the coordinates
``s = x + xi``, ``r = x - xi`` the operator factors as ``4 G_sr`` and the
problem becomes a Goursat problem on ``s, r >= 0`` with data on both axes::

    G(s, r) = D(s) -/+ D(r) + 1/4 int_0^s int_0^r a(|sigma - rho| / 2) G dsigma drho
    D(s)    = -1/2 int_0^{s/2} a

which is solved by successive approximation on the lattice ``s = p h``,
``r = m h``. Nodes with ``p + m`` even are grid nodes of the triangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import (
    ScalarField1D,
    TriangularField,
    UniformGrid,
    convergence_threshold,
    volterra_invert,
)
from .errors import InvalidArgument, NumericFailure

__all__ = [
    "Dirichlet",
    "Neumann",
    "ParabolicPlantSpec",
    "DirichletGain",
    "NeumannGain",
    "ParabolicKernelSolution",
    "solve_kernel_rd",
    "parabolic_kernel_bound",
    "diagonal_residual",
    "bottom_residual",
]

TOL = 1e-10
MAX_ITER = 200

# one-sided first-derivative stencils, offsets 0..4 away from the evaluation point
_D4 = np.array([25.0, -48.0, 36.0, -16.0, 3.0]) / 12.0


@dataclass(frozen=True)
class Dirichlet:
    pass


@dataclass(frozen=True)
class Neumann:
    q: float

    def __post_init__(self) -> None:
        if not self.q > 1.0:
            raise InvalidArgument(f"Neumann design needs q > 1, got q={self.q}")


BoundaryVariant = Union[Dirichlet, Neumann]


@dataclass(frozen=True)
class ParabolicPlantSpec:
    lam: ScalarField1D
    c: float = 0.0
    bc: BoundaryVariant = Dirichlet()

    def __post_init__(self) -> None:
        if self.c < 0:
            raise InvalidArgument(f"target shift c must be >= 0, got {self.c}")

    @property
    def grid(self) -> UniformGrid:
        return self.lam.grid


@dataclass(frozen=True)
class DirichletGain:
    k1d: ScalarField1D


@dataclass(frozen=True)
class NeumannGain:
    """Neumann feedback ``U = (k11 - q) u(1) + int k1n u``.

    ``k11 = K(1, 1)`` and ``k1n(xi) = K_x(1, xi) + q K(1, xi)``.
    """

    k11: float
    k1n: ScalarField1D
    q: float


@dataclass(frozen=True)
class ParabolicKernelSolution:
    K: TriangularField
    L: TriangularField
    gain: Union[DirichletGain, NeumannGain]
    iterations: int
    residual: float
    # False when the 4th-order K_x trace and its Richardson cross-check disagree by > 10 h^2
    derivative_consistent: bool = True
    derivative_mismatch: float = 0.0


def _cumtrapz(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    s = np.cumsum(v, axis=axis)
    first = np.take(v, [0], axis=axis)
    out = h * (s - 0.5 * first - 0.5 * v)
    idx = [slice(None)] * v.ndim
    idx[axis] = 0
    out[tuple(idx)] = 0.0
    return out


def _goursat_lattice(plant: ParabolicPlantSpec, tol: float, max_iter: int):
    grid = plant.grid
    N = grid.n - 1
    h = grid.h
    M = 2 * N + 1
    # a on the half grid y_k = k h / 2, k = 0..2N
    y = np.arange(2 * N + 1) * (0.5 * h)
    a_half = plant.lam(y) + plant.c
    # D_k = -1/2 int_0^{y_k} a; exact for the piecewise-linear a at even k
    D = -0.5 * np.concatenate(([0.0], np.cumsum(0.5 * (a_half[1:] + a_half[:-1])) * 0.5 * h))

    sign = -1.0 if isinstance(plant.bc, Dirichlet) else 1.0
    G0 = D[:, None] + sign * D[None, :]
    p = np.arange(M)
    A = 0.25 * a_half[np.abs(p[:, None] - p[None, :])]
    # nodes with x <= 1 + 2h are all that the gain derivative stencils touch
    mask = (p[:, None] + p[None, :]) <= 2 * N + 4
    G0 = G0 * mask

    G = G0.copy()
    diff = np.inf
    for it in range(1, max_iter + 1):
        G_new = G0 + _cumtrapz(_cumtrapz(A * G, h, axis=1), h, axis=0)
        G_new *= mask
        diff = float(np.max(np.abs(G_new - G)))
        G = G_new
        if not math.isfinite(diff):
            raise NumericFailure("parabolic kernel iteration diverged", residual=diff)
        if diff < convergence_threshold(tol, G):
            return G, it, diff
    raise NumericFailure(
        f"parabolic kernel iteration did not converge in {max_iter} iterations "
        f"(last sup-difference {diff:.3e})",
        residual=diff,
    )


def _kx_at_one(G: np.ndarray, N: int, h: float):
    """``K_x(1, xi_j) = G_s + G_r`` on the line ``p + m = 2N``.

    Returns the 4th-order one-sided estimate and a Richardson estimate built from
    two 2nd-order one-sided differences (steps h and 2h).
    """
    j = np.arange(N + 1)
    p = N + j
    m = N - j
    # G_s: backward in s (p >= N >= 4 always)
    s_pts = np.stack([G[p - k, m] for k in range(5)])
    # G_r: backward in r where m >= 4, forward otherwise (the lattice extends past x = 1)
    back = m >= 4
    r_pts = np.stack([np.where(back, G[p, np.clip(m - k, 0, None)], G[p, m + k]) for k in range(5)])
    r_sign = np.where(back, 1.0, -1.0)

    def fourth(pts, sgn):
        return sgn * (_D4 @ pts) / h

    def richardson(pts, sgn):
        d_h = sgn * (3 * pts[0] - 4 * pts[1] + pts[2]) / (2 * h)
        d_2h = sgn * (3 * pts[0] - 4 * pts[2] + pts[4]) / (4 * h)
        return (4 * d_h - d_2h) / 3

    kx4 = fourth(s_pts, 1.0) + fourth(r_pts, r_sign)
    kxr = richardson(s_pts, 1.0) + richardson(r_pts, r_sign)
    return kx4, kxr


def solve_kernel_rd(
    plant: ParabolicPlantSpec,
    grid: UniformGrid | None = None,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> ParabolicKernelSolution:
    if grid is not None and grid != plant.grid:
        raise InvalidArgument(f"plant lives on n={plant.grid.n}, solver asked for n={grid.n}")
    grid = plant.grid
    if grid.n < 5:
        raise InvalidArgument("reaction-diffusion kernel solver needs n >= 5")
    N, h = grid.n - 1, grid.h

    G, iterations, residual = _goursat_lattice(plant, tol, max_iter)
    I, J = np.tril_indices(grid.n)
    K = np.zeros((grid.n, grid.n))
    K[I, J] = G[I + J, I - J]
    Kf = TriangularField(grid, K)

    consistent, mismatch = True, 0.0
    if isinstance(plant.bc, Dirichlet):
        gain: Union[DirichletGain, NeumannGain] = DirichletGain(Kf.top())
    else:
        q = plant.bc.q
        kx4, kxr = _kx_at_one(G, N, h)
        mismatch = float(np.max(np.abs(kx4 - kxr)))
        consistent = mismatch <= 10 * h**2
        gain = NeumannGain(
            k11=float(K[N, N]),
            k1n=ScalarField1D(grid, kx4 + q * K[N, :]),
            q=q,
        )
    return ParabolicKernelSolution(
        K=Kf,
        L=volterra_invert(Kf),
        gain=gain,
        iterations=iterations,
        residual=residual,
        derivative_consistent=consistent,
        derivative_mismatch=mismatch,
    )


def parabolic_kernel_bound(B_lambda: float, c: float, bc: BoundaryVariant) -> float:
    """Sup-norm bound on K and L: ``(c+B) e^{2(c+B)}`` (Dirichlet), ``2(c+B) e^{4(c+B)}`` (Neumann)."""
    if B_lambda < 0 or c < 0:
        raise InvalidArgument("B_lambda and c must be nonnegative")
    s = c + B_lambda
    if isinstance(bc, Dirichlet):
        return s * math.exp(2 * s)
    if isinstance(bc, Neumann):
        return 2 * s * math.exp(4 * s)
    raise InvalidArgument(f"unknown boundary variant {bc!r}")


def diagonal_residual(sol: ParabolicKernelSolution, plant: ParabolicPlantSpec) -> float:
    grid = plant.grid
    a = plant.lam.values + plant.c
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (a[1:] + a[:-1])) * grid.h))
    return float(np.max(np.abs(np.diag(sol.K.values) + 0.5 * cum)))


def bottom_residual(sol: ParabolicKernelSolution, plant: ParabolicPlantSpec) -> float:
    """Dirichlet: max |K(x, 0)|. Neumann: max one-sided second-order |K_xi(x, 0)|."""
    K = sol.K.values
    if isinstance(plant.bc, Dirichlet):
        return float(np.max(np.abs(K[:, 0])))
    h = plant.grid.h
    rows = K[2:, :3]
    return float(np.max(np.abs(-3 * rows[:, 0] + 4 * rows[:, 1] - rows[:, 2]) / (2 * h)))
