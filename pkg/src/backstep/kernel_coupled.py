"""Backstepping kernels for the 2x2 transport system.

Plant::

    u_t = -lambda(x) u_x + sigma(x) u + omega(x) v,     u(0, t) = q v(0, t)
    v_t =  mu(x) v_x + theta(x) u,                       v(1, t) = U(t)

Kernel equations on the triangle::

    mu(x) k_u_x - lambda(xi) k_u_xi = (lambda'(xi) + sigma(xi)) k_u + theta(xi) k_v
    mu(x) k_v_x + mu(xi) k_v_xi     = mu'(xi) k_v + omega(xi) k_u
    k_u(x, x) = -theta(x) / (lambda(x) + mu(x)),   k_v(x, 0) = q lambda(0) / mu(0) k_u(x, 0)

Both characteristic families move forward in x (``dx/dtau = mu(x) > 0``), so
the solver marches row by row in x. Each node is traced back one row along its
own characteristic (midpoint rule). Its foot is interpolated on the previous
row, or the trace is cut where it exits through the diagonal (k_u) or the
bottom edge (k_v). The right-hand sides couple the two kernels and are lagged
one Picard sweep.
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
    convergence_threshold,
    derivative,
    volterra_apply,
    volterra_invert,
    volterra_solve,
)
from .errors import InvalidArgument, NumericFailure

__all__ = [
    "CoupledPlantSpec",
    "CoupledKernelSolution",
    "CoupledBoundSet",
    "solve_kernels_2x2",
    "coupled_kernel_bound",
    "bounds_from_plant",
    "transform_2x2",
    "pde_residuals",
]

TOL = 1e-10
MAX_ITER = 300


@dataclass(frozen=True)
class CoupledPlantSpec:
    lam: ScalarField1D
    mu: ScalarField1D
    sigma: ScalarField1D
    omega: ScalarField1D
    theta: ScalarField1D
    q: float
    C_lambda: float | None = None
    C_mu: float | None = None

    def __post_init__(self) -> None:
        check_same_grid(self.lam, self.mu, self.sigma, self.omega, self.theta)
        if self.q == 0:
            raise InvalidArgument("reflection coefficient q must be nonzero")
        if np.min(self.lam.values) <= 0 or np.min(self.mu.values) <= 0:
            raise InvalidArgument("transport speeds lambda and mu must be strictly positive")
        if self.C_lambda is None:
            object.__setattr__(self, "C_lambda", float(np.min(self.lam.values)))
        if self.C_mu is None:
            object.__setattr__(self, "C_mu", float(np.min(self.mu.values)))
        if self.C_lambda <= 0 or self.C_mu <= 0:
            raise InvalidArgument("C_lambda and C_mu must be positive")
        if np.min(self.lam.values) < self.C_lambda or np.min(self.mu.values) < self.C_mu:
            raise InvalidArgument("declared lower bounds C_lambda / C_mu exceed min lambda / min mu")

    @property
    def grid(self) -> UniformGrid:
        return self.lam.grid


@dataclass(frozen=True)
class CoupledKernelSolution:
    k_u: TriangularField
    k_v: TriangularField
    l_u: TriangularField
    l_v: TriangularField
    kappa_u: TriangularField
    kappa_v: TriangularField
    gain_ku1: ScalarField1D
    gain_kv1: ScalarField1D
    iterations: int
    residual: float


@dataclass(frozen=True)
class CoupledBoundSet:
    """Sup-norm data for the kernel bound and the accuracy budget.

    Barred quantities are maxima of absolute values; ``C_lambda``/``C_mu`` are
    lower bounds on the speeds; ``lambda0``/``mu0`` are the speeds at x = 0.
    """

    B_lambda: float
    B_mu: float
    B_lambda_prime: float
    B_mu_prime: float
    B_sigma: float
    B_omega: float
    B_theta: float
    C_lambda: float
    C_mu: float
    q: float
    lambda0: float
    mu0: float


def bounds_from_plant(plant: CoupledPlantSpec) -> CoupledBoundSet:
    h = plant.grid.h
    return CoupledBoundSet(
        B_lambda=plant.lam.sup(),
        B_mu=plant.mu.sup(),
        B_lambda_prime=float(np.max(np.abs(derivative(plant.lam.values, h)))),
        B_mu_prime=float(np.max(np.abs(derivative(plant.mu.values, h)))),
        B_sigma=plant.sigma.sup(),
        B_omega=plant.omega.sup(),
        B_theta=plant.theta.sup(),
        C_lambda=float(plant.C_lambda),
        C_mu=float(plant.C_mu),
        q=plant.q,
        lambda0=float(plant.lam.values[0]),
        mu0=float(plant.mu.values[0]),
    )


def coupled_kernel_bound(B: CoupledBoundSet) -> tuple[float, float, float]:
    """Return ``(K1, K2, K1 * exp(K2))`` bounding all four kernels in sup-norm."""
    for name in ("B_lambda_prime", "B_mu_prime", "B_sigma", "B_omega", "B_theta", "lambda0", "mu0"):
        if getattr(B, name) < 0:
            raise InvalidArgument(f"{name} must be nonnegative")
    if B.C_lambda <= 0 or B.C_mu <= 0:
        raise InvalidArgument("C_lambda and C_mu must be positive")
    if B.mu0 <= 0:
        raise InvalidArgument("mu(0) must be positive")
    aq = abs(B.q)
    C1 = B.B_theta * aq * B.lambda0 / B.mu0
    C2 = max(1.0 / B.C_lambda, 1.0 / B.C_mu)
    C3 = (1.0 + aq) * (B.B_lambda_prime + B.B_mu_prime + B.B_sigma + B.B_omega + B.B_theta)
    K1 = C1 * C2
    K2 = C2 * C3
    return K1, K2, K1 * math.exp(K2)


def _lagrange_stencil(xf: np.ndarray, h: float, count: int, width: int = 4):
    """Indices and weights of a ``width``-point Lagrange interpolant on nodes
    ``0..count-1`` (spacing h) evaluated at ``xf``. Narrower rows are padded
    with zero weights."""
    s = min(width, count)
    base = np.clip(np.floor(xf / h).astype(int) - (s - 1) // 2, 0, count - s)
    idx = base[:, None] + np.arange(s)[None, :]
    nodes = idx * h
    w = np.ones((xf.size, s))
    for a in range(s):
        for b in range(s):
            if a != b:
                w[:, a] *= (xf - nodes[:, b]) / (nodes[:, a] - nodes[:, b])
    if s < width:
        idx = np.concatenate([idx, np.zeros((xf.size, width - s), dtype=int)], axis=1)
        w = np.concatenate([w, np.zeros((xf.size, width - s))], axis=1)
    return idx, w


@dataclass
class _RowPlan:
    # regular nodes: foot lands on the previous row
    reg: np.ndarray
    idx: np.ndarray
    w: np.ndarray
    dx_reg: np.ndarray
    mu_foot: np.ndarray
    # nodes whose backward trace exits through the boundary inside this row step
    cut: np.ndarray
    x_star: np.ndarray
    dx_cut: np.ndarray


def _plan(grid: UniformGrid, speed_xi, mu, direction: int) -> list[_RowPlan | None]:
    """Trace every node of every row one step back in x.

    ``direction = +1`` is the k_u family (xi grows going backwards, exit
    through the diagonal); ``-1`` is the k_v family (exit through xi = 0).
    """
    h = grid.h
    nodes = grid.nodes
    plans: list[_RowPlan | None] = [None]
    for i in range(1, grid.n):
        xi_ = nodes[i]
        j = np.arange(i) if direction > 0 else np.arange(1, i + 1)
        xj = nodes[j]
        mu_i = mu(xi_)
        mu_mid = mu(xi_ - 0.5 * h)
        xi_mid = xj + direction * 0.5 * h * speed_xi(xj) / mu_i
        foot = xj + direction * h * speed_xi(xi_mid) / mu_mid
        if direction > 0:
            exits = foot > nodes[i - 1]
        else:
            exits = foot < 0.0
            # diagonal nodes ride the diagonal exactly
            foot = np.where(j == i, nodes[i - 1], foot)
            exits &= j != i
        reg = ~exits
        f_reg = np.clip(foot[reg], 0.0, nodes[i - 1])
        idx, w = _lagrange_stencil(f_reg, h, i)
        slope = np.abs(foot[exits] - xj[exits]) / h
        if direction > 0:
            x_star = (xj[exits] + slope * xi_) / (1.0 + slope)
        else:
            x_star = xi_ - xj[exits] / slope
        plans.append(
            _RowPlan(
                reg=j[reg],
                idx=idx,
                w=w,
                dx_reg=np.full(reg.sum(), h),
                mu_foot=np.full(reg.sum(), mu(nodes[i - 1])),
                cut=j[exits],
                x_star=x_star,
                dx_cut=xi_ - x_star,
            )
        )
    return plans


def solve_kernels_2x2(
    plant: CoupledPlantSpec,
    grid: UniformGrid | None = None,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> CoupledKernelSolution:
    if grid is not None and grid != plant.grid:
        raise InvalidArgument(f"plant lives on n={plant.grid.n}, solver asked for n={grid.n}")
    grid = plant.grid
    n, h = grid.n, grid.h
    if n < 3:
        raise InvalidArgument("coupled kernel solver needs n >= 3")
    x = grid.nodes
    lam, mu = plant.lam, plant.mu
    dlam = derivative(lam.values, h)
    dmu = derivative(mu.values, h)
    a_u = dlam + plant.sigma.values  # coefficient of k_u in the k_u equation
    b_u = plant.theta.values
    a_v = dmu
    b_v = plant.omega.values
    Q = plant.q * lam.values[0] / mu.values[0]
    mu_n = mu.values

    def diag_data(s):
        return -plant.theta(s) / (lam(s) + mu(s))

    plan_u = _plan(grid, lam, mu, +1)
    plan_v = _plan(grid, mu, mu, -1)

    ku = np.zeros((n, n))
    kv = np.zeros((n, n))
    ku[0, 0] = diag_data(0.0)
    kv[0, 0] = Q * ku[0, 0]
    ku_diag = diag_data(x)

    diff = np.inf
    for it in range(1, max_iter + 1):
        # right-hand sides from the previous sweep, divided by mu(x)
        Ru = (a_u[None, :] * ku + b_u[None, :] * kv) / mu_n[:, None]
        Rv = (a_v[None, :] * kv + b_v[None, :] * ku) / mu_n[:, None]
        Ru_d = np.diag(Ru).copy()
        Rv_b = Rv[:, 0].copy()
        nu = np.zeros((n, n))
        nv = np.zeros((n, n))
        nu[0, 0] = ku[0, 0]
        nv[0, 0] = kv[0, 0]
        for i in range(1, n):
            pu, pv = plan_u[i], plan_v[i]
            prev_u, prev_v = nu[i - 1], nv[i - 1]
            Ru_prev, Rv_prev = Ru[i - 1], Rv[i - 1]

            nu[i, i] = ku_diag[i]
            if pu.reg.size:
                src_foot = (Ru_prev[pu.idx] * pu.w).sum(axis=1)
                nu[i, pu.reg] = (prev_u[pu.idx] * pu.w).sum(axis=1) + 0.5 * pu.dx_reg * (
                    Ru[i, pu.reg] + src_foot
                )
            if pu.cut.size:
                t = (pu.x_star - x[i - 1]) / h
                src_star = (1 - t) * Ru_d[i - 1] + t * Ru_d[i]
                nu[i, pu.cut] = diag_data(pu.x_star) + 0.5 * pu.dx_cut * (Ru[i, pu.cut] + src_star)

            nv[i, 0] = Q * nu[i, 0]
            if pv.reg.size:
                src_foot = (Rv_prev[pv.idx] * pv.w).sum(axis=1)
                nv[i, pv.reg] = (prev_v[pv.idx] * pv.w).sum(axis=1) + 0.5 * pv.dx_reg * (
                    Rv[i, pv.reg] + src_foot
                )
            if pv.cut.size:
                t = (pv.x_star - x[i - 1]) / h
                ku_star = (1 - t) * nu[i - 1, 0] + t * nu[i, 0]
                src_star = (1 - t) * Rv_b[i - 1] + t * Rv_b[i]
                nv[i, pv.cut] = Q * ku_star + 0.5 * pv.dx_cut * (Rv[i, pv.cut] + src_star)

        diff = max(float(np.max(np.abs(nu - ku))), float(np.max(np.abs(nv - kv))))
        ku, kv = nu, nv
        if not math.isfinite(diff):
            raise NumericFailure("coupled kernel iteration diverged", residual=diff)
        if diff < convergence_threshold(tol, np.maximum(np.abs(ku), np.abs(kv))):
            break
    else:
        raise NumericFailure(
            f"coupled kernel iteration did not converge in {max_iter} iterations "
            f"(last sup-difference {diff:.3e})",
            residual=diff,
        )

    k_u = TriangularField(grid, ku)
    k_v = TriangularField(grid, kv)
    l_v = volterra_invert(k_v)
    l_u, _, _ = volterra_solve(k_v, k_u)
    return CoupledKernelSolution(
        k_u=k_u,
        k_v=k_v,
        l_u=l_u,
        l_v=l_v,
        kappa_u=l_u.row_scaled(plant.omega),
        kappa_v=l_v.row_scaled(plant.omega),
        gain_ku1=k_u.top(),
        gain_kv1=k_v.top(),
        iterations=it,
        residual=diff,
    )


def transform_2x2(
    sol: CoupledKernelSolution,
    u: ScalarField1D,
    second: ScalarField1D,
    direction: str = "forward",
) -> ScalarField1D:
    """Forward: ``beta = v - int k_u u - int k_v v``. Inverse: ``v = beta + int l_u u + int l_v beta``.

    ``second`` is v for the forward map and beta for the inverse; u is never modified.
    """
    g = check_same_grid(sol.k_u, u, second)
    W = g.trapezoid_weights
    if direction == "forward":
        v = second
        return ScalarField1D(
            g, volterra_apply(sol.k_v, v, "forward").values - (W * sol.k_u.values) @ u.values
        )
    if direction == "inverse":
        beta = second
        return ScalarField1D(
            g, volterra_apply(sol.l_v, beta, "inverse").values + (W * sol.l_u.values) @ u.values
        )
    raise InvalidArgument(f"direction must be 'forward' or 'inverse', got {direction!r}")


def pde_residuals(sol: CoupledKernelSolution, plant: CoupledPlantSpec) -> tuple[float, float]:
    """Max centred-difference residual of both kernel PDEs at interior nodes
    (``1 <= j``, ``j + 1 <= i - 1``, ``i <= n - 2``)."""
    grid = plant.grid
    h = grid.h
    ku, kv = sol.k_u.values, sol.k_v.values
    lam, mu = plant.lam.values, plant.mu.values
    dlam, dmu = derivative(lam, h), derivative(mu, h)
    I, J = np.tril_indices(grid.n, -2)
    keep = (J >= 1) & (I <= grid.n - 2)
    I, J = I[keep], J[keep]

    def dx(k):
        return (k[I + 1, J] - k[I - 1, J]) / (2 * h)

    def dxi(k):
        return (k[I, J + 1] - k[I, J - 1]) / (2 * h)

    mx, lx = mu[I], lam[J]
    ru = mx * dx(ku) - lx * dxi(ku) - (dlam[J] + plant.sigma.values[J]) * ku[I, J] - plant.theta.values[J] * kv[I, J]
    rv = mx * dx(kv) + mu[J] * dxi(kv) - dmu[J] * kv[I, J] - plant.omega.values[J] * ku[I, J]
    return float(np.max(np.abs(ru))), float(np.max(np.abs(rv)))
