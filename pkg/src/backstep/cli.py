"""Command-line entry point: ``backstep <command> --config <path-or-name>``.

Exit codes: 0 pass, 1 a decay guarantee was not met, 2 bad config or
arguments, 3 a numerical solve failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, NumericFailure
from .gains import perturbation_target
from .kernel_coupled import bounds_from_plant, coupled_kernel_bound
from .kernel_hyperbolic import hyperbolic_kernel_bound
from .kernel_parabolic import parabolic_kernel_bound
from .scenario import ScenarioSpec, load_config, parse_scenario, parse_sweep
from .verify import budget_for, build_plant, solve_family, verify_theorem

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_OUT_DIR = "backstep_out"


def _fmt(v) -> str:
    return "%.17g" % v


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _load_scenario(ref: str, seed: int | None) -> ScenarioSpec:
    spec = parse_scenario(load_config(ref))
    if seed is not None:
        spec = spec.with_overrides(seed=seed)
    return spec


# ---------------------------------------------------------------- solve-kernel


def _kernel_bound(spec: ScenarioSpec, plant) -> float:
    if spec.family == "hyperbolic":
        return hyperbolic_kernel_bound(plant.f.sup(), plant.g.sup())
    if spec.family in ("dirichlet", "neumann"):
        return parabolic_kernel_bound(plant.lam.sup(), plant.c, plant.bc)
    return coupled_kernel_bound(bounds_from_plant(plant))[2]


def cmd_solve_kernel(args) -> int:
    spec = _load_scenario(args.config, args.seed)
    plant = build_plant(spec)
    sol = solve_family(spec, plant)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x = spec.grid.nodes
    I, J = np.tril_indices(spec.grid_n)
    if spec.family == "coupled":
        kernels = {"k_u": sol.k_u, "k_v": sol.k_v}
        gain_cols = {"k_u1": sol.gain_ku1.values, "k_v1": sol.gain_kv1.values}
    else:
        kernels = {"K": sol.K}
        if spec.family == "hyperbolic":
            gain_cols = {"gain": sol.gain_k1.values}
        elif spec.family == "dirichlet":
            gain_cols = {"gain": sol.gain.k1d.values}
        else:
            gain_cols = {"gain": sol.gain.k1n.values}
    _write_csv(
        out / f"{spec.name}_kernel.csv",
        ["x", "xi", *kernels],
        zip(x[I], x[J], *(k.values[I, J] for k in kernels.values())),
    )
    _write_csv(out / f"{spec.name}_gain.csv", ["xi", *gain_cols], zip(x, *gain_cols.values()))
    sup = max(k.sup() for k in kernels.values())
    bound = _kernel_bound(spec, plant)
    print(f"family {spec.family}, n={spec.grid_n}, {sol.iterations} iterations")
    print(f"kernel sup-norm {sup:.6g}  bound {bound:.6g}  ({'within' if sup <= bound else 'EXCEEDS'})")
    if spec.family == "neumann":
        print(f"K(1,1) = {sol.gain.k11:.10g}; feedback U = (K(1,1) - q) u(1) + int gain u")
    print(f"wrote {out / (spec.name + '_kernel.csv')} and {out / (spec.name + '_gain.csv')}")
    return EXIT_PASS


# ---------------------------------------------------------------- epsilon-star


def cmd_epsilon_star(args) -> int:
    spec = _load_scenario(args.config, args.seed)
    plant = build_plant(spec)
    budget = budget_for(spec, plant)
    fam = budget.family
    out = {"family": spec.family, "epsilon_star": budget.value, "kernel_bound": budget.kernel_bound}
    if spec.family == "coupled":
        B = fam.bounds
        out.update(
            {k: getattr(B, k) for k in B.__dataclass_fields__},
            c_bar=fam.c_bar, c=fam.c, K1=fam.K1, K2=fam.K2,
            delta=fam.delta, delta1=fam.delta1, delta2=fam.delta2,
        )
    else:
        out.update({k: getattr(fam, k) for k in fam.__dataclass_fields__})
    out["g_targets"] = list(perturbation_target(budget))
    print(json.dumps(out, indent=2, allow_nan=False))
    return EXIT_PASS


# ---------------------------------------------------------------- verify


def _report_text(s: dict) -> str:
    lines = [f"scenario {s['name']} ({s['family']}, {s['control']}), n={s['grid_n']}, dt={s['dt']:.6g}"]
    lines.append(f"epsilon*        {s['epsilon_star']:.6g}   eps used {s['eps_used']}")
    lines.append(f"kernel sup      {s['kernel_sup']:.6g}   bound {s['kernel_bound']:.6g}")
    if s["g_sup"] is not None:
        lines.append(f"|G| sup         {s['g_sup']:.6g}   bound {s['g_bound']:.6g}")
    if s["g_components"] is not None:
        (a, b), (ta, tb) = s["g_components"], s["g_component_bounds"]
        lines.append(f"|g_u|, |g_v|    {a:.6g}, {b:.6g}   separate ceilings {ta:.6g}, {tb:.6g}")
    if s["finite_time_extinction"]:
        rate = "inf (norm fell below 1e-12 of its running peak)"
    else:
        rate = f"{s['measured_rate']:.6g}"
    if s["control"] == "closed_loop":
        lines.append(f"{s['decay_norm']} decay rate   {rate}   guaranteed {s['guaranteed_rate']:.6g}")
        lines.append(f"Lyapunov check  {s['lyapunov_fraction']:.3f} of steps at rate {s['lyapunov_rate']:.6g}")
    else:
        lines.append(f"{s['decay_norm']} decay rate   {rate}   expected {s['expected_rate']:.6g} (open loop)")
    lines.append(f"overshoot M     {s['overshoot_M']:.6g}   fit R^2 {s['fit_quality']:.6g}")
    lines.append("PASS" if s["pass"] else "FAIL")
    return "\n".join(lines) + "\n"


def _write_trace(path: Path, trace) -> None:
    cols = {}
    for k in sorted(trace.norms):
        cols[k] = trace.norms[k]
    if trace.lyapunov is not None:
        cols["lyapunov"] = trace.lyapunov
    for k in sorted(trace.boundary):
        cols[k] = trace.boundary[k]
    _write_csv(path, ["time", *cols], zip(trace.times, *cols.values()))


def run_verify(spec: ScenarioSpec, out_dir: Path) -> dict:
    report = verify_theorem(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    s = report.summary
    if "trace_csv" in spec.outputs:
        _write_trace(out_dir / f"{spec.name}_trace.csv", report.trace)
    if "summary_json" in spec.outputs:
        _write_json(out_dir / f"{spec.name}_summary.json", s)
    if "report_text" in spec.outputs:
        (out_dir / f"{spec.name}_report.txt").write_text(_report_text(s))
    return s


def cmd_verify(args) -> int:
    spec = _load_scenario(args.config, args.seed)
    s = run_verify(spec, Path(args.out_dir))
    print(_report_text(s), end="")
    return EXIT_PASS if s["pass"] else EXIT_FAIL


# ---------------------------------------------------------------- sweep


def _sweep_point(spec: ScenarioSpec, out_dir: Path) -> tuple[str, dict]:
    try:
        return "ok", run_verify(spec, out_dir)
    except NumericFailure as exc:
        return "numeric", {"error": str(exc)}
    except InvalidArgument as exc:
        return "config", {"error": str(exc)}


def cmd_sweep(args) -> int:
    cfg_path = Path(args.config)
    sweep = parse_sweep(load_config(args.config), cfg_path.parent if cfg_path.exists() else None)
    out = Path(args.out_dir)
    specs = []
    for v in sweep.values:
        spec = sweep.base.with_overrides(**{sweep.parameter: v})
        if args.seed is not None and sweep.parameter != "seed":
            spec = spec.with_overrides(seed=args.seed)
        specs.append(spec.with_overrides(name=f"{sweep.name}_{sweep.parameter}_{v}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, specs, [out] * len(specs)))
    else:
        results = [_sweep_point(s, out) for s in specs]

    rows, worst = [], EXIT_PASS
    for v, (status, s) in zip(sweep.values, results):
        if status == "numeric":
            print(f"{sweep.parameter}={v}: numeric failure: {s['error']}", file=sys.stderr)
            return EXIT_NUMERIC
        if status == "config":
            print(f"{sweep.parameter}={v}: {s['error']}", file=sys.stderr)
            return EXIT_CONFIG
        rate = s["measured_rate"]
        rows.append([v, "inf" if rate is None else float(rate), str(s["pass"]).lower(), float(s["roundtrip_error"])])
        if not s["pass"]:
            worst = EXIT_FAIL
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{sweep.name}_sweep.csv"
    _write_csv(path, [sweep.parameter, "measured_rate", "pass", "oracle_error"], rows)
    print(f"{sweep.parameter:>14} {'measured_rate':>16} {'pass':>6} {'oracle_error':>14}")
    for v, rate, ok, err in rows:
        r = rate if isinstance(rate, str) else f"{rate:.6g}"
        print(f"{v!s:>14} {r:>16} {ok:>6} {err:>14.4e}")
    print(f"wrote {path}")
    return worst


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="backstep", description="Backstepping gain kernels and closed-loop checks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("solve-kernel", cmd_solve_kernel, "solve the kernel equations and write kernel/gain CSVs"),
        ("epsilon-star", cmd_epsilon_star, "print the gain accuracy budget and its constants as JSON"),
        ("verify", cmd_verify, "run the perturbed closed loop and check the decay guarantee"),
        ("sweep", cmd_sweep, "run a scenario over a list of parameter values"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True, help="config path or bundled scenario name")
        sp.add_argument("--out-dir", default=DEFAULT_OUT_DIR)
        sp.add_argument("--seed", type=int, default=None, help="override the perturbation seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel scenarios for sweep")
        sp.set_defaults(func=fn)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgument, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
