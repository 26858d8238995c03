"""Closed-loop time integration, decay-rate fits and Lyapunov checks.

Every simulator takes the plant, the (possibly approximate) gain actually fed
back, and optionally the exact kernels. The exact kernels are only used for
diagnostics: the transformed state, its boundary value and the Lyapunov
functional recorded along the trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import (
    L2,
    H1Norm,
    L2Norm,
    NormKind,
    ScalarField1D,
    TriangularField,
    WeightedExp,
    check_same_grid,
    derivative,
)
from .errors import InvalidArgument, NumericFailure
from .kernel_coupled import CoupledKernelSolution, CoupledPlantSpec
from .kernel_hyperbolic import HyperbolicPlantSpec
from .kernel_parabolic import (
    Dirichlet,
    DirichletGain,
    NeumannGain,
    ParabolicPlantSpec,
)

__all__ = [
    "SimTrace",
    "DecayEstimate",
    "LyapunovReport",
    "simulate_hyperbolic_pide",
    "simulate_reaction_diffusion",
    "simulate_2x2",
    "compatible_initial_condition",
    "estimate_decay_rate",
    "lyapunov_derivative_check",
    "principal_growth_rate",
]

# norms at or below this fraction of their running maximum count as extinct
EXTINCTION_LEVEL = 1e-12
_CFL_SLACK = 1e-12
# states beyond this magnitude are treated as a blow-up (squares would overflow)
BLOWUP_LEVEL = 1e150


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Time series of one closed-loop run.

    ``norms`` maps names (``"L2"``, ``"H1"``, ``"L2_w"``, ``"L2_u"``, ...)
    to arrays over ``times``; ``boundary`` does the same for boundary values.
    ``snapshots`` holds the state every ``snapshot_every`` steps.
    """

    times: np.ndarray
    norms: dict
    lyapunov: Optional[np.ndarray]
    boundary: dict
    snapshots: dict
    snapshot_times: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgument("trace times must be strictly increasing")
        for k, v in self.norms.items():
            if not np.all(np.isfinite(v)):
                raise NumericFailure(f"norm {k!r} became non-finite (simulation blew up)")


@dataclass(frozen=True)
class DecayEstimate:
    rate: float
    overshoot_M: float
    window: tuple[float, float]
    fit_quality: float
    # True when the norm hit the extinction level inside the window (rate is +inf)
    extinct: bool = False


@dataclass(frozen=True)
class LyapunovReport:
    fraction: float
    passed: bool
    checked: int
    tol: float
    guaranteed_rate: float


def _time_grid(T: float, dt: float) -> np.ndarray:
    if not T > 0:
        raise InvalidArgument(f"horizon T must be positive, got {T}")
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    steps = T / dt
    nsteps = int(round(steps)) if abs(steps - round(steps)) < 1e-9 * steps else int(math.ceil(steps))
    return np.arange(nsteps + 1) * dt


def _guard(*states) -> None:
    for st in states:
        m = float(np.max(np.abs(st)))
        if not m <= BLOWUP_LEVEL:
            raise NumericFailure(f"state magnitude {m:.3g} exceeds {BLOWUP_LEVEL:.0e}; the closed loop blew up")


def _snap(every: int, k: int, last: int) -> bool:
    return k % every == 0 or k == last


class _Recorder:
    def __init__(self, nt: int, snapshot_every: int):
        self.nt = nt
        self.every = max(1, int(snapshot_every))
        self.series: dict = {}
        self.snaps: dict = {}
        self.snap_idx: list = []

    def put(self, k: int, **values) -> None:
        for name, v in values.items():
            if name not in self.series:
                self.series[name] = np.zeros(self.nt)
            self.series[name][k] = v

    def snapshot(self, k: int, **states) -> None:
        if not _snap(self.every, k, self.nt - 1):
            return
        if not self.snap_idx or self.snap_idx[-1] != k:
            self.snap_idx.append(k)
        for name, s in states.items():
            self.snaps.setdefault(name, []).append(np.array(s))

    def trace(self, times, norm_keys, lyap_key, boundary_keys, extras=None) -> SimTrace:
        return SimTrace(
            times=times,
            norms={k: self.series[k] for k in norm_keys if k in self.series},
            lyapunov=self.series.get(lyap_key),
            boundary={k: self.series[k] for k in boundary_keys if k in self.series},
            snapshots={k: np.array(v) for k, v in self.snaps.items()},
            snapshot_times=times[np.array(self.snap_idx, dtype=int)],
            extras=extras or {},
        )


# ---------------------------------------------------------------- hyperbolic PIDE


def simulate_hyperbolic_pide(
    plant: HyperbolicPlantSpec,
    gain: ScalarField1D,
    u0: ScalarField1D,
    T: float,
    dt: float,
    kernel: TriangularField | None = None,
    c: float = 0.0,
    snapshot_every: int = 1,
) -> SimTrace:
    """Upwind transport toward x = 0 with boundary feedback ``u(1) = int gain u``.

    The boundary value uses the new interior values, so the trapezoid end
    weight at x = 1 turns the feedback into a scalar equation for ``u(1)``.
    """
    grid = check_same_grid(plant.g, gain, u0)
    h = grid.h
    if dt > h * (1 + _CFL_SLACK):
        raise InvalidArgument(f"CFL violated: dt={dt} exceeds h={h} (unit transport speed)")
    times = _time_grid(T, dt)
    r = dt / h
    fW = grid.trapezoid_weights * plant.f.values
    has_f = bool(np.any(plant.f.values))
    g = plant.g.values
    wk = grid.full_weights * gain.values
    denom = 1.0 - wk[-1]
    if abs(denom) < 1e-14:
        raise NumericFailure("boundary feedback equation is singular (gain(1) * h / 2 == 1)")
    KW = grid.trapezoid_weights * kernel.values if kernel is not None else None
    weight = np.exp(c * grid.nodes) * grid.full_weights
    fw = grid.full_weights

    rec = _Recorder(times.size, snapshot_every)
    u = u0.values.copy()

    def record(k: int, U: float) -> None:
        vals = dict(L2=math.sqrt(fw @ u**2), U=U, u0=u[0])
        if KW is not None:
            w = u - KW @ u
            vals.update(L2_w=math.sqrt(fw @ w**2), w1=w[-1], lyapunov=float(weight @ w**2))
        rec.put(k, **vals)
        rec.snapshot(k, u=u)

    record(0, float(wk @ u))
    for k in range(1, times.size):
        dtk = times[k] - times[k - 1]
        rk = dtk / h if k == times.size - 1 else r
        src = g * u[0]
        if has_f:
            src = src + fW @ u
        new = np.empty_like(u)
        new[:-1] = u[:-1] + rk * (u[1:] - u[:-1]) + dtk * src[:-1]
        new[-1] = (wk[:-1] @ new[:-1]) / denom
        u = new
        _guard(u)
        record(k, float(u[-1]))
    return rec.trace(times, ["L2", "L2_w"], "lyapunov", ["U", "u0", "w1"])


# ---------------------------------------------------------------- reaction-diffusion


def compatible_initial_condition(
    base: ScalarField1D,
    gain: Union[DirichletGain, NeumannGain, ScalarField1D],
) -> ScalarField1D:
    """Shift ``base`` by ``a x`` so that ``u(1)`` equals the initial Dirichlet
    feedback ``int gain u``. ``base(0)`` must already vanish."""
    k = gain.k1d if isinstance(gain, DirichletGain) else gain
    if isinstance(k, NeumannGain):
        raise InvalidArgument("Neumann feedback sets a slope, not a value; no shift needed")
    g = check_same_grid(base, k)
    w = g.full_weights * k.values
    x = g.nodes
    den = 1.0 - w @ x
    if abs(den) < 1e-12:
        raise InvalidArgument("cannot match the feedback with a linear shift (1 - int gain x = 0)")
    a = (w @ base.values - base.values[-1]) / den
    return ScalarField1D(g, base.values + a * x)


def _laplacian_ghost(n: int, h: float) -> np.ndarray:
    A = np.zeros((n, n))
    i = np.arange(1, n - 1)
    A[i, i - 1] = A[i, i + 1] = 1.0
    A[i, i] = -2.0
    # Neumann ghost nodes, the x = 1 flux enters separately
    A[0, 0], A[0, 1] = -2.0, 2.0
    A[-1, -1], A[-1, -2] = -2.0, 2.0
    return A / h**2


def simulate_reaction_diffusion(
    plant: ParabolicPlantSpec,
    gain: Union[DirichletGain, NeumannGain, None],
    u0: ScalarField1D,
    T: float,
    dt: float,
    kernel: TriangularField | None = None,
    snapshot_every: int = 1,
) -> SimTrace:
    """Crank-Nicolson diffusion with explicit reaction.

    ``gain=None`` runs the open loop (``U = 0``). The feedback row is solved
    together with the interior update so the boundary condition holds exactly
    at every time level.
    """
    grid = check_same_grid(plant.lam, u0)
    n, h = grid.n, grid.h
    times = _time_grid(T, dt)
    fw = grid.full_weights
    lam = plant.lam.values
    dirichlet = isinstance(plant.bc, Dirichlet)

    if dirichlet:
        if gain is not None and not isinstance(gain, DirichletGain):
            raise InvalidArgument("Dirichlet plant needs a DirichletGain")
        if abs(u0.values[0]) > 1e-12 * max(1.0, np.max(np.abs(u0.values))):
            raise InvalidArgument(f"Dirichlet initial condition needs u0(0) = 0, got {u0.values[0]}")
        U_row = np.zeros(n) if gain is None else fw * gain.k1d.values
        D = np.zeros((n, n))
        i = np.arange(1, n - 1)
        D[i, i - 1] = D[i, i + 1] = 1.0 / h**2
        D[i, i] = -2.0 / h**2
        reaction = lam.copy()
        reaction[[0, -1]] = 0.0
    else:
        if gain is not None and not isinstance(gain, NeumannGain):
            raise InvalidArgument("Neumann plant needs a NeumannGain")
        if gain is None:
            U_row = np.zeros(n)
        else:
            U_row = fw * gain.k1n.values
            U_row[-1] += gain.k11 - gain.q
        D = _laplacian_ghost(n, h)
        D[-1, :] += (2.0 / h) * U_row
        reaction = lam

    def factor(step: float):
        A = np.eye(n) - 0.5 * step * D
        B = np.eye(n) + 0.5 * step * D + np.diag(step * reaction)
        if dirichlet:
            # u(0) = 0 and u(1) = int gain u, imposed at the new time level
            A[0, :] = 0.0
            A[0, 0] = 1.0
            A[-1, :] = -U_row
            A[-1, -1] += 1.0
            B[0, :] = 0.0
            B[-1, :] = 0.0
        lu = lu_factor(A)
        if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) < 1e-14:
            raise NumericFailure("Crank-Nicolson matrix is singular")
        return lu, B

    steps = {}

    KW = grid.trapezoid_weights * kernel.values if kernel is not None else None
    rec = _Recorder(times.size, snapshot_every)
    u = u0.values.copy()

    def record(k: int) -> None:
        ux = derivative(u, h)
        vals = dict(
            L2=math.sqrt(fw @ u**2),
            H1=math.sqrt(fw @ (u**2 + ux**2)),
            U=float(U_row @ u),
            u1=u[-1],
        )
        if KW is not None:
            w = u - KW @ u
            wx = derivative(w, h)
            V1 = 0.5 * float(fw @ w**2)
            V2 = 0.5 * float(fw @ wx**2)
            V = V1 + 4 * V2 if dirichlet else V1
            vals.update(L2_w=math.sqrt(2 * V1), V1=V1, V2=V2, lyapunov=V, w1=w[-1])
        rec.put(k, **vals)
        rec.snapshot(k, u=u)

    record(0)
    for k in range(1, times.size):
        step = round(float(times[k] - times[k - 1]), 15)
        if step not in steps:
            steps[step] = factor(step)
        lu, B = steps[step]
        u = lu_solve(lu, B @ u, check_finite=False)
        _guard(u)
        record(k)
    return rec.trace(times, ["L2", "H1", "L2_w"], "lyapunov", ["U", "u1", "w1", "V1", "V2"])


def principal_growth_rate(plant: ParabolicPlantSpec) -> float:
    """Largest real eigenvalue of the open-loop operator ``d2/dx2 + lambda(x)``
    on the plant's grid (second-order finite differences)."""
    grid = plant.grid
    n, h = grid.n, grid.h
    lam = plant.lam.values
    if isinstance(plant.bc, Dirichlet):
        main = -2.0 / h**2 + lam[1:-1]
        off = np.full(n - 3, 1.0 / h**2)
        M = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
        return float(np.max(np.linalg.eigvalsh(M)))
    M = _laplacian_ghost(n, h) + np.diag(lam)
    return float(np.max(np.linalg.eigvals(M).real))


# ---------------------------------------------------------------- 2x2 hyperbolic system


def simulate_2x2(
    plant: CoupledPlantSpec,
    gains: tuple[ScalarField1D, ScalarField1D],
    u0: ScalarField1D,
    v0: ScalarField1D,
    T: float,
    dt: float,
    kernels: CoupledKernelSolution | None = None,
    c: float = 0.0,
    snapshot_every: int = 1,
) -> SimTrace:
    """Upwind per channel: u moves right (fed by ``q v(0)``), v moves left
    (fed by the feedback at x = 1)."""
    grid = check_same_grid(plant.lam, gains[0], gains[1], u0, v0)
    h = grid.h
    lam, mu = plant.lam.values, plant.mu.values
    vmax = max(np.max(lam), np.max(mu))
    if dt > h / vmax * (1 + _CFL_SLACK):
        raise InvalidArgument(f"CFL violated: dt={dt} exceeds h/max(lambda, mu)={h / vmax}")
    times = _time_grid(T, dt)
    sig, om, th = plant.sigma.values, plant.omega.values, plant.theta.values
    fw = grid.full_weights
    wu = fw * gains[0].values
    wv = fw * gains[1].values
    denom = 1.0 - wv[-1]
    if abs(denom) < 1e-14:
        raise NumericFailure("boundary feedback equation is singular")
    q = plant.q

    if kernels is not None:
        KuW = grid.trapezoid_weights * kernels.k_u.values
        KvW = grid.trapezoid_weights * kernels.k_v.values
        alpha = min(q**-2, 1.0)
        wt_u = alpha * np.exp(-c * grid.nodes) / lam * fw
        wt_b = np.exp(c * grid.nodes) / mu * fw

    rec = _Recorder(times.size, snapshot_every)
    u = u0.values.copy()
    v = v0.values.copy()

    def record(k: int) -> None:
        nu, nv = fw @ u**2, fw @ v**2
        vals = dict(
            L2_u=math.sqrt(nu), L2_v=math.sqrt(nv), L2=math.sqrt(nu + nv),
            U=float(wu @ u + wv @ v), u0=u[0], v0=v[0],
        )
        if kernels is not None:
            beta = v - KuW @ u - KvW @ v
            vals.update(
                L2_w=math.sqrt(nu + fw @ beta**2),
                beta1=beta[-1],
                lyapunov=float(wt_u @ u**2 + wt_b @ beta**2),
            )
        rec.put(k, **vals)
        rec.snapshot(k, u=u, v=v)

    record(0)
    for k in range(1, times.size):
        dtk = times[k] - times[k - 1]
        un = np.empty_like(u)
        vn = np.empty_like(v)
        un[1:] = u[1:] - dtk * lam[1:] / h * (u[1:] - u[:-1]) + dtk * (sig[1:] * u[1:] + om[1:] * v[1:])
        vn[:-1] = v[:-1] + dtk * mu[:-1] / h * (v[1:] - v[:-1]) + dtk * th[:-1] * u[:-1]
        un[0] = q * vn[0]
        vn[-1] = (wu @ un + wv[:-1] @ vn[:-1]) / denom
        u, v = un, vn
        _guard(u, v)
        record(k)
    return rec.trace(
        times, ["L2", "L2_u", "L2_v", "L2_w"], "lyapunov", ["U", "u0", "v0", "beta1"]
    )


# ---------------------------------------------------------------- analysis


def _series(trace: SimTrace, which) -> tuple[np.ndarray, str]:
    if isinstance(which, L2Norm):
        which = "L2"
    elif isinstance(which, H1Norm):
        which = "H1"
    elif isinstance(which, WeightedExp):
        raise InvalidArgument("weighted norms are recorded as the 'lyapunov' series")
    if which == "lyapunov":
        if trace.lyapunov is None:
            raise InvalidArgument("trace has no Lyapunov series (no exact kernel was given)")
        return trace.lyapunov, which
    if which not in trace.norms:
        raise InvalidArgument(f"trace has no norm {which!r}; available: {sorted(trace.norms)}")
    return trace.norms[which], which


def estimate_decay_rate(
    trace: SimTrace,
    which: Union[NormKind, str] = L2,
    window: tuple[float, float] | None = None,
) -> DecayEstimate:
    """Least-squares exponential fit ``norm ~ A exp(-rate t)`` on ``window``.

    The default window drops the first 20% of the horizon. If the norm hits the
    extinction level inside the window the rate is ``inf`` and ``extinct`` is set.
    """
    y_all, _ = _series(trace, which)
    t_all = trace.times
    if window is None:
        window = (t_all[0] + 0.2 * (t_all[-1] - t_all[0]), t_all[-1])
    t0, t1 = window
    if not t0 < t1:
        raise InvalidArgument(f"window start must precede its end, got {window}")
    span = t_all[-1] - t_all[0]
    if t0 < t_all[0] - 1e-9 * span or t1 > t_all[-1] + 1e-9 * span:
        raise InvalidArgument(f"window {window} lies outside the trace [{t_all[0]}, {t_all[-1]}]")
    sel = (t_all >= t0 - 1e-9 * span) & (t_all <= t1 + 1e-9 * span)
    t, y = t_all[sel], y_all[sel]
    if t.size < 2:
        raise InvalidArgument("window contains fewer than two samples")
    win = (float(t[0]), float(t[-1]))

    if not np.all(np.isfinite(y_all)):
        raise NumericFailure("trace norm is not finite; cannot fit a decay rate")
    # extinct = fallen to roundoff level relative to the largest value seen so far
    peak = np.maximum.accumulate(np.abs(y_all))[sel]
    dead = y <= EXTINCTION_LEVEL * peak
    if dead.any():
        first = int(np.argmax(dead))
        M = 1.0 if first == 0 else float(np.max(y[:first]) / y[0])
        return DecayEstimate(math.inf, M, win, 1.0, extinct=True)

    logy = np.log(y)
    slope, intercept = np.polyfit(t, logy, 1)
    resid = logy - (slope * t + intercept)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - float(np.sum(resid**2)) / ss_tot)
    rate = -float(slope)
    M = float(np.max(y * np.exp(rate * (t - t[0]))) / y[0])
    return DecayEstimate(rate, M, win, r2)


def lyapunov_derivative_check(
    trace: SimTrace, guaranteed_rate: float, skip: int = 5, pass_fraction: float = 0.95
) -> LyapunovReport:
    """Fraction of steps with ``(V[k+1] - V[k]) / dt <= -rate V[k] + 10 dt max V``."""
    if trace.lyapunov is None:
        raise InvalidArgument("trace has no Lyapunov series")
    V = trace.lyapunov
    t = trace.times
    dts = np.diff(t)
    tol = 10.0 * float(np.max(dts)) * float(np.max(V))
    dV = np.diff(V) / dts
    ok = dV <= -guaranteed_rate * V[:-1] + tol
    ok = ok[skip:]
    if ok.size == 0:
        raise InvalidArgument("trace too short for the Lyapunov check")
    frac = float(np.mean(ok))
    return LyapunovReport(frac, frac >= pass_fraction, int(ok.size), tol, guaranteed_rate)
