"""Scenario configs: strict JSON parsing and coefficient rendering.

A scenario fixes a plant family, its coefficients, the target parameters, the
grid and time step, how the gain is perturbed and which files to write. Unknown
keys are rejected so that typos surface as config errors instead of silently
falling back to defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .core import ScalarField1D, TriangularField, UniformGrid
from .errors import InvalidArgument

__all__ = [
    "ConfigError",
    "Perturbation",
    "ScenarioSpec",
    "SweepSpec",
    "FAMILIES",
    "parse_scenario",
    "parse_sweep",
    "load_config",
    "bundled_names",
    "render_scalar",
    "render_triangular",
]

FAMILIES = ("hyperbolic", "dirichlet", "neumann", "coupled")
COEFFICIENTS = {
    "hyperbolic": ("f", "g"),
    "dirichlet": ("lambda",),
    "neumann": ("lambda",),
    "coupled": ("lambda", "mu", "sigma", "omega", "theta"),
}
BOUND_KEYS = {
    "hyperbolic": ("B_f", "B_g"),
    "dirichlet": ("B_lambda",),
    "neumann": ("B_lambda",),
    "coupled": (
        "B_lambda", "B_mu", "B_lambda_prime", "B_mu_prime", "B_sigma",
        "B_omega", "B_theta", "C_lambda", "C_mu",
    ),
}
PERTURBATION_MODES = ("constant_offset", "smooth_noise")
OUTPUT_KINDS = ("trace_csv", "summary_json", "report_text")
SWEEP_PARAMETERS = ("eps_fraction", "grid_n", "seed", "c", "c_bar", "q", "dt", "horizon")


class ConfigError(InvalidArgument):
    """Malformed or inconsistent scenario config."""


@dataclass(frozen=True)
class Perturbation:
    mode: str = "smooth_noise"
    eps_fraction: float = 0.5
    seed: int = 0
    # stress tests only: absolute gain error, may exceed the budget
    eps_absolute: Optional[float] = None


@dataclass(frozen=True)
class ScenarioSpec:
    family: str
    coefficients: dict
    grid_n: int
    horizon: float
    c: Optional[float] = None
    q: Optional[float] = None
    c_bar: Optional[float] = None
    dt: Optional[float] = None
    perturbation: Perturbation = Perturbation()
    outputs: tuple = OUTPUT_KINDS
    initial_condition: dict = field(default_factory=dict)
    decay_window: Optional[tuple] = None
    control: str = "closed_loop"
    bounds: dict = field(default_factory=dict)
    name: str = "scenario"

    @property
    def grid(self) -> UniformGrid:
        return UniformGrid(self.grid_n)

    def with_overrides(self, **kw) -> "ScenarioSpec":
        """Copy with top-level or perturbation fields replaced, re-validated."""
        pert = {k: kw.pop(k) for k in ("eps_fraction", "seed", "mode") if k in kw}
        spec = replace(self, **kw)
        if pert:
            spec = replace(spec, perturbation=replace(spec.perturbation, **pert))
        _validate(spec)
        return spec


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioSpec
    parameter: str
    values: tuple
    name: str = "sweep"


# ---------------------------------------------------------------- helpers


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigError(f"missing required field '{key}' in {where}")
    return obj[key]


def _reject_unknown(obj: dict, allowed, where: str) -> None:
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"unknown field(s) {extra} in {where}")


def _number(v, name: str, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field '{name}' must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"field '{name}' must be finite")
    if positive and not v > 0:
        raise ConfigError(f"field '{name}' must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(f"field '{name}' must be nonnegative, got {v}")
    return v


def _number_list(v, name: str) -> np.ndarray:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"field '{name}' must be a non-empty list of numbers")
    return np.array([_number(a, name) for a in v])


# ---------------------------------------------------------------- coefficient descriptors


def render_scalar(desc: dict, grid: UniformGrid, name: str = "coefficient") -> ScalarField1D:
    """Evaluate a one-variable descriptor on ``grid``.

    Types: ``constant {value}``, ``polynomial {coeffs}`` (ascending powers),
    ``cosine {amps, phases}`` (``sum amps[k] cos(k pi x + phases[k])``) and
    ``sampled {values}`` (equispaced on [0, 1], linearly interpolated).
    """
    if not isinstance(desc, dict):
        raise ConfigError(f"coefficient '{name}' must be an object with a 'type'")
    kind = _require(desc, "type", f"coefficient '{name}'")
    x = grid.nodes
    if kind == "constant":
        _reject_unknown(desc, ("type", "value"), f"coefficient '{name}'")
        vals = np.full(grid.n, _number(_require(desc, "value", name), f"{name}.value"))
    elif kind == "polynomial":
        _reject_unknown(desc, ("type", "coeffs"), f"coefficient '{name}'")
        coeffs = _number_list(_require(desc, "coeffs", name), f"{name}.coeffs")
        vals = np.polynomial.polynomial.polyval(x, coeffs)
    elif kind == "cosine":
        _reject_unknown(desc, ("type", "amps", "phases"), f"coefficient '{name}'")
        amps = _number_list(_require(desc, "amps", name), f"{name}.amps")
        phases = _number_list(desc.get("phases", [0.0] * len(amps)), f"{name}.phases")
        if phases.size != amps.size:
            raise ConfigError(f"coefficient '{name}': amps and phases differ in length")
        k = np.arange(amps.size)
        vals = np.cos(np.pi * k[None, :] * x[:, None] + phases[None, :]) @ amps
    elif kind == "sampled":
        _reject_unknown(desc, ("type", "values"), f"coefficient '{name}'")
        samples = _number_list(_require(desc, "values", name), f"{name}.values")
        if samples.size < 2:
            raise ConfigError(f"coefficient '{name}': sampled values need at least 2 entries")
        vals = np.interp(x, np.linspace(0.0, 1.0, samples.size), samples)
    else:
        raise ConfigError(f"coefficient '{name}': unknown type {kind!r}")
    return ScalarField1D(grid, vals)


def render_triangular(desc: dict, grid: UniformGrid, name: str = "coefficient") -> TriangularField:
    """Two-variable descriptors: ``constant``, ``polynomial2d {coeffs}`` with
    ``coeffs[i][j]`` multiplying ``x^i xi^j``, and ``sampled {values}`` on an
    equispaced square (bilinear interpolation)."""
    if not isinstance(desc, dict):
        raise ConfigError(f"coefficient '{name}' must be an object with a 'type'")
    kind = _require(desc, "type", f"coefficient '{name}'")
    X, XI = np.meshgrid(grid.nodes, grid.nodes, indexing="ij")
    if kind == "constant":
        _reject_unknown(desc, ("type", "value"), f"coefficient '{name}'")
        vals = np.full((grid.n, grid.n), _number(_require(desc, "value", name), f"{name}.value"))
    elif kind == "polynomial2d":
        _reject_unknown(desc, ("type", "coeffs"), f"coefficient '{name}'")
        rows = _require(desc, "coeffs", name)
        if not isinstance(rows, list) or not rows:
            raise ConfigError(f"coefficient '{name}': coeffs must be a non-empty list of lists")
        width = max(len(r) if isinstance(r, list) else 0 for r in rows)
        C = np.zeros((len(rows), width))
        for i, r in enumerate(rows):
            C[i, : len(r)] = _number_list(r, f"{name}.coeffs")
        vals = np.polynomial.polynomial.polyval2d(X, XI, C)
    elif kind == "sampled":
        _reject_unknown(desc, ("type", "values"), f"coefficient '{name}'")
        rows = _require(desc, "values", name)
        try:
            S = np.array(rows, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"coefficient '{name}': sampled values must be a numeric square") from exc
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 2 or not np.all(np.isfinite(S)):
            raise ConfigError(f"coefficient '{name}': sampled values must be a finite m x m array, m >= 2")
        pts = np.linspace(0.0, 1.0, S.shape[0])
        interp = RegularGridInterpolator((pts, pts), S)
        vals = interp(np.stack([X.ravel(), XI.ravel()], axis=1)).reshape(X.shape)
    else:
        raise ConfigError(f"coefficient '{name}': unknown type {kind!r}")
    return TriangularField(grid, vals)


# ---------------------------------------------------------------- scenario parsing

_SCENARIO_KEYS = (
    "name", "family", "coefficients", "c", "q", "c_bar", "grid_n", "dt", "horizon",
    "perturbation", "outputs", "initial_condition", "decay_window", "control", "bounds",
)


def parse_scenario(obj: Any) -> ScenarioSpec:
    if not isinstance(obj, dict):
        raise ConfigError("scenario config must be a JSON object")
    _reject_unknown(obj, _SCENARIO_KEYS, "scenario")
    family = _require(obj, "family", "scenario")
    if family not in FAMILIES:
        raise ConfigError(f"field 'family' must be one of {FAMILIES}, got {family!r}")

    coeffs = _require(obj, "coefficients", "scenario")
    if not isinstance(coeffs, dict):
        raise ConfigError("field 'coefficients' must be an object")
    _reject_unknown(coeffs, COEFFICIENTS[family], f"coefficients of a {family} scenario")
    for name in COEFFICIENTS[family]:
        _require(coeffs, name, "coefficients")

    grid_n = _require(obj, "grid_n", "scenario")
    if isinstance(grid_n, bool) or not isinstance(grid_n, int):
        raise ConfigError(f"field 'grid_n' must be an integer, got {grid_n!r}")

    pert_obj = obj.get("perturbation", {})
    if not isinstance(pert_obj, dict):
        raise ConfigError("field 'perturbation' must be an object")
    _reject_unknown(pert_obj, ("mode", "eps_fraction", "seed", "eps_absolute"), "perturbation")
    seed = pert_obj.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"field 'perturbation.seed' must be an integer, got {seed!r}")
    eps_abs = pert_obj.get("eps_absolute")
    pert = Perturbation(
        mode=pert_obj.get("mode", "smooth_noise"),
        eps_fraction=_number(pert_obj.get("eps_fraction", 0.5), "perturbation.eps_fraction"),
        seed=seed,
        eps_absolute=None if eps_abs is None else _number(eps_abs, "perturbation.eps_absolute", positive=True),
    )

    outputs = obj.get("outputs", list(OUTPUT_KINDS))
    if not isinstance(outputs, list) or any(o not in OUTPUT_KINDS for o in outputs):
        raise ConfigError(f"field 'outputs' must be a list drawn from {OUTPUT_KINDS}")

    ic = obj.get("initial_condition", {})
    if not isinstance(ic, dict):
        raise ConfigError("field 'initial_condition' must be an object")
    _reject_unknown(ic, ("u", "v"), "initial_condition")

    window = obj.get("decay_window")
    if window is not None:
        if not isinstance(window, list) or len(window) != 2:
            raise ConfigError("field 'decay_window' must be a two-element list [t_start, t_end]")
        window = (_number(window[0], "decay_window[0]"), _number(window[1], "decay_window[1]"))

    bounds = obj.get("bounds", {})
    if not isinstance(bounds, dict):
        raise ConfigError("field 'bounds' must be an object")
    _reject_unknown(bounds, BOUND_KEYS[family], f"bounds of a {family} scenario")
    bounds = {k: _number(v, f"bounds.{k}", nonneg=True) for k, v in bounds.items()}

    def opt(key, **kw):
        return None if obj.get(key) is None else _number(obj[key], key, **kw)

    spec = ScenarioSpec(
        family=family,
        coefficients=coeffs,
        grid_n=grid_n,
        horizon=_number(_require(obj, "horizon", "scenario"), "horizon", positive=True),
        c=opt("c"),
        q=opt("q"),
        c_bar=opt("c_bar"),
        dt=opt("dt", positive=True),
        perturbation=pert,
        outputs=tuple(outputs),
        initial_condition=ic,
        decay_window=window,
        control=obj.get("control", "closed_loop"),
        bounds=bounds,
        name=str(obj.get("name", "scenario")),
    )
    _validate(spec)
    return spec


def _validate(spec: ScenarioSpec) -> None:
    # repeated here because sweep overrides bypass the parser
    for key, v in (("grid_n", spec.grid_n), ("perturbation.seed", spec.perturbation.seed)):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise ConfigError(f"field '{key}' must be an integer, got {v!r}")
    if spec.grid_n < 5:
        raise ConfigError(f"field 'grid_n' must be at least 5, got {spec.grid_n}")
    if spec.family in ("hyperbolic", "dirichlet", "neumann") and spec.c is None:
        raise ConfigError(f"missing required field 'c' for a {spec.family} scenario")
    if spec.c is not None and spec.c < 0:
        raise ConfigError(f"field 'c' must be nonnegative, got {spec.c}")
    if spec.family in ("neumann", "coupled") and spec.q is None:
        raise ConfigError(f"missing required field 'q' for a {spec.family} scenario")
    if spec.family == "neumann" and not spec.q > 1:
        raise ConfigError(f"field 'q' must exceed 1 for a neumann scenario (budget vanishes at q <= 1), got {spec.q}")
    if spec.family == "coupled":
        if spec.c_bar is None:
            raise ConfigError("missing required field 'c_bar' for a coupled scenario")
        if not spec.c_bar > 0:
            raise ConfigError(f"field 'c_bar' must be positive, got {spec.c_bar}")
        if spec.q == 0:
            raise ConfigError("field 'q' must be nonzero for a coupled scenario")
    if spec.family == "hyperbolic" and not (spec.c or 0) > 0:
        raise ConfigError("field 'c' must be positive for a hyperbolic scenario")
    p = spec.perturbation
    if p.mode not in PERTURBATION_MODES:
        raise ConfigError(f"field 'perturbation.mode' must be one of {PERTURBATION_MODES}, got {p.mode!r}")
    if not 0.0 <= p.eps_fraction < 1.0:
        raise ConfigError(f"field 'perturbation.eps_fraction' must lie in [0, 1), got {p.eps_fraction}")
    if spec.control not in ("closed_loop", "open_loop"):
        raise ConfigError(f"field 'control' must be 'closed_loop' or 'open_loop', got {spec.control!r}")
    if spec.control == "open_loop" and spec.family not in ("dirichlet", "neumann"):
        raise ConfigError("open-loop runs are supported for the dirichlet and neumann families only")
    if spec.decay_window is not None:
        t0, t1 = spec.decay_window
        if not 0 <= t0 < t1 <= spec.horizon:
            raise ConfigError(f"field 'decay_window' must satisfy 0 <= start < end <= horizon, got {spec.decay_window}")
    if spec.family != "coupled" and "v" in spec.initial_condition:
        raise ConfigError("initial_condition 'v' only applies to coupled scenarios")


# ---------------------------------------------------------------- sweeps


def parse_sweep(obj: Any, base_dir: Path | None = None) -> SweepSpec:
    if not isinstance(obj, dict):
        raise ConfigError("sweep config must be a JSON object")
    _reject_unknown(obj, ("name", "base", "axis"), "sweep")
    base = _require(obj, "base", "sweep")
    if isinstance(base, str):
        base_spec = parse_scenario(load_config(base, base_dir))
    else:
        base_spec = parse_scenario(base)
    axis = _require(obj, "axis", "sweep")
    if not isinstance(axis, dict):
        raise ConfigError("field 'axis' must be an object")
    _reject_unknown(axis, ("parameter", "values"), "axis")
    param = _require(axis, "parameter", "axis")
    if param not in SWEEP_PARAMETERS:
        raise ConfigError(f"field 'axis.parameter' must be one of {SWEEP_PARAMETERS}, got {param!r}")
    values = _require(axis, "values", "axis")
    if not isinstance(values, list) or not values:
        raise ConfigError("field 'axis.values' must be a non-empty list")
    for v in values:
        try:
            base_spec.with_overrides(**{param: v})
        except (TypeError, InvalidArgument) as exc:
            raise ConfigError(f"sweep value {param}={v!r} is invalid: {exc}") from exc
    return SweepSpec(base_spec, param, tuple(values), str(obj.get("name", "sweep")))


# ---------------------------------------------------------------- loading


def bundled_names() -> list[str]:
    root = resources.files("backstep") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(ref: str, base_dir: Path | None = None) -> dict:
    """Read a config from a path, or from the bundled scenarios by name."""
    path = Path(ref)
    if base_dir is not None and not path.is_absolute() and not path.exists():
        path = base_dir / ref
    if path.exists():
        text = path.read_text()
    else:
        name = ref[:-5] if ref.endswith(".json") else ref
        res = resources.files("backstep") / "scenarios" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"config {ref!r} is neither a readable file nor a bundled scenario ({', '.join(bundled_names())})")
        text = res.read_text()
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {ref!r} is not valid JSON: {exc}") from exc


def _reject_constant(name: str):
    raise ConfigError(f"non-standard JSON constant {name} is not allowed")
