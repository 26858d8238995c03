"""Accuracy budgets, approximate gains and the boundary perturbations they induce.

Closed-loop stability with an approximate gain only depends on the sup-norm of
the gain error. This module computes the admissible error budget for each plant
family, produces approximate gains with a known error (worst-case generators
and a small learned surrogate of the coefficient-to-gain map), and evaluates
the nonlocal boundary term that the error injects into the target system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .core import ScalarField1D, TriangularField, check_same_grid
from .errors import InvalidArgument
from .kernel_coupled import CoupledBoundSet, coupled_kernel_bound
from .kernel_hyperbolic import hyperbolic_kernel_bound
from .kernel_parabolic import Dirichlet, Neumann, parabolic_kernel_bound

__all__ = [
    "HyperbolicBudget",
    "DirichletBudget",
    "NeumannBudget",
    "CoupledBudget",
    "EpsilonBudget",
    "epsilon_star",
    "epsilon_star_hyperbolic",
    "epsilon_star_dirichlet",
    "epsilon_star_neumann",
    "epsilon_star_coupled",
    "perturbation_target",
    "ConstantOffset",
    "SmoothNoise",
    "SurrogateFit",
    "ApproxGain",
    "perturb_gain",
    "perturb_gain_pair",
    "GainSurrogate",
    "fit_surrogate_gain",
    "boundary_perturbation",
    "boundary_perturbation_2x2",
    "SENSOR_COUNT",
]


# ---------------------------------------------------------------- budgets


@dataclass(frozen=True)
class HyperbolicBudget:
    B_f: float
    B_g: float
    c: float


@dataclass(frozen=True)
class DirichletBudget:
    B_lambda: float
    c: float


@dataclass(frozen=True)
class NeumannBudget:
    B_lambda: float
    c: float
    q: float


@dataclass(frozen=True)
class CoupledBudget:
    bounds: CoupledBoundSet
    c_bar: float
    c: float
    delta: float
    delta1: float
    delta2: float
    K1: float
    K2: float


BudgetFamily = Union[HyperbolicBudget, DirichletBudget, NeumannBudget, CoupledBudget]


@dataclass(frozen=True)
class EpsilonBudget:
    value: float
    family: BudgetFamily
    kernel_bound: float


def epsilon_star_hyperbolic(B_f: float, B_g: float, c: float) -> EpsilonBudget:
    if c <= 0:
        raise InvalidArgument(f"target decay parameter c must be positive, got {c}")
    bound = hyperbolic_kernel_bound(B_f, B_g)
    value = math.sqrt(c / (2 * math.exp(c))) / (1 + bound)
    return EpsilonBudget(value, HyperbolicBudget(B_f, B_g, c), bound)


def epsilon_star_dirichlet(B_lambda: float, c: float) -> EpsilonBudget:
    bound = parabolic_kernel_bound(B_lambda, c, Dirichlet())
    value = 1.0 / (math.sqrt(20.0) * (1 + bound))
    return EpsilonBudget(value, DirichletBudget(B_lambda, c), bound)


def epsilon_star_neumann(B_lambda: float, c: float, q: float) -> EpsilonBudget:
    bc = Neumann(q)  # validates q > 1
    bound = parabolic_kernel_bound(B_lambda, c, bc)
    value = math.sqrt((q - 1) / 2) / (1 + bound)
    return EpsilonBudget(value, NeumannBudget(B_lambda, c, q), bound)


def epsilon_star_coupled(bounds: CoupledBoundSet, c_bar: float) -> EpsilonBudget:
    """Budget for the 2x2 system with user decay rate ``c_bar``.

    The weight parameter is ``c = 2 c_bar / min(C_lambda, C_mu) + 2 delta``,
    the smallest value the Lyapunov argument admits.
    """
    if c_bar <= 0:
        raise InvalidArgument(f"c_bar must be positive, got {c_bar}")
    B = bounds
    if B.B_lambda <= 0 or B.B_mu <= 0:
        raise InvalidArgument("B_lambda and B_mu must be positive")
    K1, K2, kb = coupled_kernel_bound(B)
    Cl, Cm = B.C_lambda, B.C_mu
    delta1 = (2 * B.B_sigma + B.B_omega * (1 + kb * (1 + math.sqrt(B.B_lambda / Cl)))) / Cl
    delta2 = B.B_mu * B.B_omega * (1 + kb) / (Cl * Cm)
    delta = max(delta1, delta2)
    c = 2 * c_bar / min(Cl, Cm) + 2 * delta
    num = math.sqrt(c * Cl / (4 * B.B_lambda) * (1 + B.q**2) * math.exp(-2 * c)) + math.sqrt(
        c * Cm / (4 * B.B_mu) * math.exp(-c)
    )
    value = num / (1 + 2 * kb)
    return EpsilonBudget(value, CoupledBudget(B, c_bar, c, delta, delta1, delta2, K1, K2), kb)


def epsilon_star(family: BudgetFamily | CoupledBoundSet, **kw) -> EpsilonBudget:
    """Dispatch on a family record; a bare ``CoupledBoundSet`` needs ``c_bar=``."""
    if isinstance(family, HyperbolicBudget):
        return epsilon_star_hyperbolic(family.B_f, family.B_g, family.c)
    if isinstance(family, DirichletBudget):
        return epsilon_star_dirichlet(family.B_lambda, family.c)
    if isinstance(family, NeumannBudget):
        return epsilon_star_neumann(family.B_lambda, family.c, family.q)
    if isinstance(family, CoupledBudget):
        return epsilon_star_coupled(family.bounds, family.c_bar)
    if isinstance(family, CoupledBoundSet):
        return epsilon_star_coupled(family, kw["c_bar"])
    raise InvalidArgument(f"unknown budget family {family!r}")


def perturbation_target(budget: EpsilonBudget) -> tuple[float, ...]:
    """Sup-norm ceilings on the boundary perturbation(s) that the Lyapunov
    argument needs. One entry for scalar plants; ``(g_u, g_v)`` for the 2x2 system."""
    fam = budget.family
    if isinstance(fam, HyperbolicBudget):
        return (math.sqrt(fam.c * math.exp(-fam.c) / 2),)
    if isinstance(fam, DirichletBudget):
        return (math.sqrt(1 / 20),)
    if isinstance(fam, NeumannBudget):
        return (math.sqrt((fam.q - 1) / 2),)
    B, c = fam.bounds, fam.c
    gu = math.sqrt(c * B.C_lambda / (4 * B.B_lambda) * (1 + B.q**2) * math.exp(-2 * c))
    gv = math.sqrt(c * B.C_mu / (4 * B.B_mu) * math.exp(-c))
    return (gu, gv)


# ---------------------------------------------------------------- approximate gains


@dataclass(frozen=True)
class ConstantOffset:
    pass


@dataclass(frozen=True)
class SmoothNoise:
    seed: int = 0


@dataclass(frozen=True)
class SurrogateFit:
    basis_size: int


PerturbationMode = Union[ConstantOffset, SmoothNoise, SurrogateFit]


@dataclass(frozen=True)
class ApproxGain:
    """Approximate gain with its exact sup-error against the exact gain.

    ``values`` is one field, or the pair ``(k_u1, k_v1)`` for the 2x2 system.
    """

    values: Union[ScalarField1D, tuple[ScalarField1D, ScalarField1D]]
    declared_eps: float
    mode: PerturbationMode

    def error(self, exact) -> Union[ScalarField1D, tuple[ScalarField1D, ScalarField1D]]:
        """``exact - approx`` (the gain error entering the boundary perturbation)."""
        if isinstance(self.values, tuple):
            return tuple(e - a for e, a in zip(exact, self.values))
        return exact - self.values


def _cosine_noise(x: np.ndarray, seed: int, terms: int = 5) -> np.ndarray:
    rng = np.random.default_rng(seed)
    amps = rng.standard_normal(terms)
    phases = rng.uniform(0.0, 2 * np.pi, terms)
    k = np.arange(terms)
    return np.cos(np.pi * k[:, None] * x[None, :] + phases[:, None]).T @ amps


def _clamp_to_budget(exact: np.ndarray, approx: np.ndarray, eps: float) -> np.ndarray:
    # rounding in exact + delta can overshoot eps by an ulp; step back toward exact
    approx = approx.copy()
    for _ in range(8):
        bad = np.abs(approx - exact) > eps
        if not bad.any():
            return approx
        approx[bad] = np.nextafter(approx[bad], exact[bad])
    raise AssertionError("could not place perturbation inside its budget")


def perturb_gain(
    exact: ScalarField1D,
    eps: float,
    mode: PerturbationMode = ConstantOffset(),
    seed: int | None = None,
) -> ApproxGain:
    """Exact gain plus a perturbation of sup-norm ``eps``.

    ``seed`` overrides the seed stored on a :class:`SmoothNoise` mode.
    """
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    if isinstance(mode, ConstantOffset):
        delta = np.full(exact.grid.n, eps)
    elif isinstance(mode, SmoothNoise):
        s = mode.seed if seed is None else seed
        mode = SmoothNoise(s)
        eta = _cosine_noise(exact.grid.nodes, s)
        delta = eps * eta / np.max(np.abs(eta))
    else:
        raise InvalidArgument("surrogate gains come from fit_surrogate_gain, not perturb_gain")
    vals = _clamp_to_budget(exact.values, exact.values + delta, eps)
    return ApproxGain(ScalarField1D(exact.grid, vals), float(eps), mode)


def perturb_gain_pair(
    exact: tuple[ScalarField1D, ScalarField1D],
    eps: float,
    mode: PerturbationMode = ConstantOffset(),
    seed: int | None = None,
) -> ApproxGain:
    """Perturb both 2x2 gains by ``eps`` each (independent noise streams)."""
    if isinstance(mode, SmoothNoise):
        s = mode.seed if seed is None else seed
        a = perturb_gain(exact[0], eps, SmoothNoise(s))
        b = perturb_gain(exact[1], eps, SmoothNoise(s + 1))
        mode = SmoothNoise(s)
    else:
        a = perturb_gain(exact[0], eps, mode)
        b = perturb_gain(exact[1], eps, mode)
    return ApproxGain((a.values, b.values), float(eps), mode)


# ---------------------------------------------------------------- surrogate

SENSOR_COUNT = 16

Fields = Union[ScalarField1D, TriangularField, Sequence[Union[ScalarField1D, TriangularField]]]
Gain = Union[ScalarField1D, tuple[ScalarField1D, ScalarField1D]]


def _as_list(fields: Fields) -> list:
    if isinstance(fields, (ScalarField1D, TriangularField)):
        return [fields]
    return list(fields)


def _sensor_vector(fields: Fields) -> np.ndarray:
    parts = []
    for f in _as_list(fields):
        idx = np.rint(np.linspace(0.0, 1.0, SENSOR_COUNT) * (f.grid.n - 1)).astype(int)
        if isinstance(f, ScalarField1D):
            parts.append(f.values[idx])
        else:
            I, J = np.tril_indices(SENSOR_COUNT)
            parts.append(f.values[idx[I], idx[J]])
    return np.concatenate(parts)


def _gain_vector(gain: Gain) -> np.ndarray:
    if isinstance(gain, tuple):
        return np.concatenate([g.values for g in gain])
    return np.asarray(gain.values)


class GainSurrogate:
    """Least-squares surrogate of the coefficient-to-gain map.

    Sensor readings are compressed by PCA; each retained coordinate enters
    through its first three powers (plus an intercept); a ridge regression maps those features to
    the leading POD coefficients of the gain.
    """

    def __init__(self, basis_size: int, ridge: float = 1e-10):
        if basis_size < 1:
            raise InvalidArgument("basis_size must be >= 1")
        self.basis_size = basis_size
        self.ridge = ridge

    def fit(self, samples: Sequence[tuple[Fields, Gain]]) -> "GainSurrogate":
        if len(samples) < self.basis_size:
            raise InvalidArgument(
                f"need at least basis_size={self.basis_size} samples, got {len(samples)}"
            )
        grids = {f.grid for coeffs, _ in samples for f in _as_list(coeffs)}
        first = samples[0][1]
        grids |= {g.grid for g in (first if isinstance(first, tuple) else (first,))}
        if len(grids) != 1:
            raise InvalidArgument("all samples must live on one grid")
        self._grid = grids.pop()
        self._pair = isinstance(first, tuple)

        X = np.array([_sensor_vector(c) for c, _ in samples])
        Y = np.array([_gain_vector(g) for _, g in samples])
        self._x_mean = X.mean(axis=0)
        self._y_mean = Y.mean(axis=0)
        Xc, Yc = X - self._x_mean, Y - self._y_mean

        self._x_basis = self._leading_modes(Xc)
        Z = Xc @ self._x_basis.T
        self._z_scale = np.maximum(np.max(np.abs(Z), axis=0, initial=0.0), 1e-300)
        F = self._features(Z)
        self._y_basis = self._leading_modes(Yc)
        C = Yc @ self._y_basis.T
        if C.shape[1] == 0:
            self._coef = np.zeros((F.shape[1], C.shape[1]))
        else:
            A = F.T @ F
            A += self.ridge * max(np.trace(A), 1.0) * np.eye(A.shape[0])
            self._coef = np.linalg.solve(A, F.T @ C)
        return self

    def _leading_modes(self, M: np.ndarray) -> np.ndarray:
        if not M.size:
            return np.zeros((0, M.shape[1]))
        _, s, Vt = np.linalg.svd(M, full_matrices=False)
        rank = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 1e-14 else 0
        return Vt[: min(rank, self.basis_size)]

    def _features(self, Z: np.ndarray) -> np.ndarray:
        S = Z / self._z_scale
        return np.concatenate([np.ones((S.shape[0], 1)), S, S**2, S**3], axis=1)

    def predict(self, coeffs: Fields) -> Gain:
        z = (_sensor_vector(coeffs) - self._x_mean) @ self._x_basis.T
        y = self._y_mean + (self._features(z[None, :]) @ self._coef @ self._y_basis)[0]
        if self._pair:
            n = self._grid.n
            return (ScalarField1D(self._grid, y[:n]), ScalarField1D(self._grid, y[n:]))
        return ScalarField1D(self._grid, y)


def fit_surrogate_gain(
    samples: Sequence[tuple[Fields, Gain]],
    basis_size: int,
    probe: Fields,
    solver: Callable[[Fields], Gain] | None = None,
    probe_exact: Gain | None = None,
) -> ApproxGain:
    """Fit a :class:`GainSurrogate` and evaluate it at ``probe``.

    ``declared_eps`` is the measured sup-error against the exact gain of the
    probe, taken from ``probe_exact`` or computed with ``solver``. Probes
    outside the training family are allowed; the error is reported as is.
    """
    if probe_exact is None:
        if solver is None:
            raise InvalidArgument("pass solver or probe_exact to measure the surrogate error")
        probe_exact = solver(probe)
    model = GainSurrogate(basis_size).fit(samples)
    pred = model.predict(probe)
    err = float(np.max(np.abs(_gain_vector(pred) - _gain_vector(probe_exact))))
    return ApproxGain(pred, err, SurrogateFit(basis_size))


# ---------------------------------------------------------------- boundary perturbation


def _tail_integral(L: TriangularField, e: ScalarField1D) -> np.ndarray:
    # int_xi^1 L(s, xi) e(s) ds for every xi node
    return (L.grid.tail_weights * L.values.T) @ e.values


def boundary_perturbation(gain_error: ScalarField1D, L: TriangularField) -> ScalarField1D:
    """``G(xi) = -e(xi) - int_xi^1 L(s, xi) e(s) ds`` for gain error ``e``."""
    g = check_same_grid(gain_error, L)
    return ScalarField1D(g, -gain_error.values - _tail_integral(L, gain_error))


def boundary_perturbation_2x2(
    err_u: ScalarField1D,
    err_v: ScalarField1D,
    l_u: TriangularField,
    l_v: TriangularField,
) -> tuple[ScalarField1D, ScalarField1D]:
    """``(g_u, g_v)``; both integral terms are driven by the v-gain error."""
    g = check_same_grid(err_u, err_v, l_u, l_v)
    gu = -err_u.values - _tail_integral(l_u, err_v)
    gv = -err_v.values - _tail_integral(l_v, err_v)
    return ScalarField1D(g, gu), ScalarField1D(g, gv)
