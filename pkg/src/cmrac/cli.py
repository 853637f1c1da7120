"""Command-line front end: ``cmrac feasibility | simulate | compare | sweep | preset``.

Exit codes: 0 success, 2 bad config or usage, 3 feasibility condition fails
without ``--override-feasibility``, 4 a barrier-law run left its bounds,
5 numerical abort. Artifacts go to ``--out``, else ``$CMRAC_OUTPUT_DIR``,
else ``./cmrac-output``.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import plotting
from .errors import CmracError, ConfigError, InfeasibleConfig, SimulationAbort
from .feasibility import build_region_grid
from .sim import feasibility_report, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_VIOLATION = 4
EXIT_ABORT = 5

OUTPUT_ENV = "CMRAC_OUTPUT_DIR"
SWEEP_AXES = ("u_bar", "x_bar", "d_bar", "gamma_scale", "x0_scale")


class UsageError(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def output_dir(args):
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "cmrac-output")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_kv(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items:
            fh.write(f"{k} = {_fmt(v)}\n")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_trajectory_csv(path, traj):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(traj.columns) + "\n")
        np.savetxt(fh, traj.data, fmt="%.17g", delimiter=",")


def write_manifest(out, scenario, command, report, extra=None):
    manifest = {
        "toolkit_version": __version__,
        "command": command,
        "config_path": scenario.source,
        "config_digest": scenario.digest,
        "output_dir": str(out.resolve()),
        "resolved_config": scenario.to_dict(),
        "feasibility": report.as_dict(),
    }
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)
    return manifest


def load_manifest_scenario(path):
    """Re-parse the resolved configuration stored in a manifest."""
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return cfgmod.parse_scenario(manifest["resolved_config"], source=str(path), digest=manifest.get("config_digest", ""))


def report_items(rep):
    items = [
        ("eta", rep.eta),
        ("alpha", rep.alpha),
        ("beta", rep.beta),
        ("sigma", rep.sigma),
        ("varrho", rep.varrho),
        ("case", rep.case_label),
        ("c1_satisfied", rep.c1_satisfied),
        ("c1_margin", rep.c1_margin),
        ("min_u_bar", rep.min_u_bar),
        ("max_x_bar", "infeasible" if rep.max_x_bar is None else rep.max_x_bar),
        ("r_bar", rep.r_bar),
        ("B_norm", rep.B_norm),
        ("lambda_min_P", rep.lambda_min_P),
        ("lambda_max_P", rep.lambda_max_P),
        ("xi", rep.xi),
        ("xi_prime", rep.xi_prime),
        ("state_only_satisfied", rep.state_only_satisfied),
        ("state_only_threshold", rep.state_only_threshold),
        ("input_only_bound", rep.input_only_bound),
    ]
    return items


def _print_items(items, stream=None):
    stream = stream or sys.stdout
    for k, v in items:
        print(f"{k} = {_fmt(v)}", file=stream)


def _run(cfg, override, engine):
    """Run and return (trajectory, metrics, abort_reason)."""
    try:
        res = run_scenario(cfg, override_feasibility=override, engine=engine)
        return res.trajectory, res.metrics, ""
    except SimulationAbort as exc:
        return exc.trajectory, exc.metrics, str(exc)


def _metrics_items(law, scenario, metrics, reason):
    items = [("scenario", scenario.name), ("law", law)]
    items += list(metrics.as_dict().items())
    items.append(("abort_reason", reason or "none"))
    return items


def _emit_run(out, law, scenario, traj, metrics, reason, plots):
    write_trajectory_csv(out / f"trajectory_{law}.csv", traj)
    items = _metrics_items(law, scenario, metrics, reason)
    write_kv(out / f"metrics_{law}.txt", items)
    write_json(out / f"metrics_{law}.json", dict(items))
    if plots and len(traj) > 0:
        plotting.plot_norms(traj, scenario.constraints, out / f"norms_{law}.svg", title=f"{scenario.name}: {law}")
    return items


def _exit_for(law, metrics, reason):
    if reason:
        return EXIT_ABORT
    if law == "blf" and not (metrics.state_constraint_ok and metrics.input_constraint_ok and metrics.omega_e_ok):
        return EXIT_VIOLATION
    return EXIT_OK


def _apply_overrides(scenario, args):
    if getattr(args, "t_end", None) is not None:
        scenario.t_end = float(args.t_end)
    if getattr(args, "dt", None) is not None:
        scenario.dt = float(args.dt)
    return scenario


def cmd_feasibility(args):
    scenario = cfgmod.resolve(args.config)
    cfg = scenario.sim_config()
    rep = feasibility_report(cfg)
    items = [("scenario", scenario.name)] + report_items(rep)
    notes = rep.notes()
    _print_items(items)
    for n in notes:
        print(f"note: {n}")
    if args.region or args.out or os.environ.get(OUTPUT_ENV):
        out = output_dir(args)
        write_kv(out / "feasibility.txt", items + [(f"note_{i}", n) for i, n in enumerate(notes)])
        write_json(out / "feasibility.json", dict(rep.as_dict(), notes=notes, scenario=scenario.name))
        if args.region:
            cs = scenario.constraints
            alpha = rep.alpha if args.alpha is None else args.alpha
            beta = rep.beta if args.beta is None else args.beta
            u_range = args.u_range or (0.1, 2.0 * cs.u_bar)
            x_range = args.x_range or (0.1, 2.0 * cs.x_bar)
            grid = build_region_grid(u_range, x_range, alpha, beta, args.resolution)
            with open(out / "region.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x_bar", "u_bar", "feasible"])
                for x, u, f in grid.rows():
                    w.writerow([repr(x), repr(u), f])
            point = None if (args.alpha is not None or args.beta is not None) else (cs.x_bar, cs.u_bar)
            plotting.plot_region(grid, out / "region.svg", point=point)
            print(f"region = {out / 'region.csv'}")
    return EXIT_OK


def cmd_simulate(args):
    scenario = _apply_overrides(cfgmod.resolve(args.config), args)
    law = args.law or scenario.law
    cfg = scenario.sim_config(law)
    rep = feasibility_report(cfg)
    out = output_dir(args)
    write_manifest(out, scenario, "simulate", rep, {"law": law, "override_feasibility": args.override_feasibility})
    if law == "blf" and not rep.c1_satisfied and not args.override_feasibility:
        print(
            f"error: feasibility condition fails (margin {rep.c1_margin:.6g}); "
            "pass --override-feasibility to simulate anyway",
            file=sys.stderr,
        )
        return EXIT_INFEASIBLE
    try:
        traj, metrics, reason = _run(cfg, True, args.engine)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    items = _emit_run(out, law, scenario, traj, metrics, reason, args.plots)
    _print_items(items)
    return _exit_for(law, metrics, reason)


COMPARE_COLUMNS = (
    "max_x_norm",
    "max_u_norm",
    "max_e_norm",
    "state_constraint_ok",
    "input_constraint_ok",
    "omega_e_ok",
    "saturation_fraction",
    "aborted",
)


def cmd_compare(args):
    scenario = _apply_overrides(cfgmod.resolve(args.config), args)
    rep = feasibility_report(scenario.sim_config("blf"))
    out = output_dir(args)
    write_manifest(out, scenario, "compare", rep, {"laws": ["blf", "classical"]})
    if not rep.c1_satisfied and not args.override_feasibility:
        print(f"error: feasibility condition fails (margin {rep.c1_margin:.6g})", file=sys.stderr)
        return EXIT_INFEASIBLE
    runs = {}
    try:
        for law in ("blf", "classical"):
            runs[law] = _run(scenario.sim_config(law), True, args.engine)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for law, (traj, metrics, reason) in runs.items():
        _emit_run(out, law, scenario, traj, metrics, reason, False)

    cs = scenario.constraints
    with open(out / "compare.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["law", *COMPARE_COLUMNS])
        for law, (_, m, _) in runs.items():
            w.writerow([law, *(_fmt(getattr(m, c)) for c in COMPARE_COLUMNS)])
    _write_side_by_side(out / "compare_trajectories.csv", runs)

    no_dist = scenario.disturbance.dim == 0 or scenario.disturbance.norm_cap == 0 or all(
        len(ch) == 0 for ch in scenario.disturbance.base.channels
    )
    lines = [f"scenario {scenario.name}: bounds x_bar={cs.x_bar:g}, u_bar={cs.u_bar:g}"]
    lines.append(f"{'law':<10}{'max ||x||':>12}{'max ||u||':>12}{'max ||e||':>12}  verdict")
    for law, (_, m, reason) in runs.items():
        if reason:
            verdict = "aborted"
        elif m.state_constraint_ok and m.input_constraint_ok:
            verdict = "within bounds"
        else:
            verdict = "violates " + " and ".join(
                n for n, ok in (("state bound", m.state_constraint_ok), ("input bound", m.input_constraint_ok)) if not ok
            )
        lines.append(f"{law:<10}{m.max_x_norm:>12.6f}{m.max_u_norm:>12.6f}{m.max_e_norm:>12.6f}  {verdict}")
    if no_dist:
        lines.append("no disturbance in this scenario: any baseline violation comes from the adaptive transient alone")
    table = "\n".join(lines) + "\n"
    (out / "compare_table.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    if args.plots:
        plotting.plot_compare(
            {law: traj for law, (traj, _, _) in runs.items() if len(traj) > 0},
            cs,
            out / "compare.svg",
            title=f"{scenario.name}: blf vs classical",
        )
    _, m, reason = runs["blf"]
    code = _exit_for("blf", m, reason)
    if code == EXIT_OK and runs["classical"][2]:
        code = EXIT_ABORT
    return code


def _write_side_by_side(path, runs):
    laws = list(runs)
    trajs = [runs[law][0] for law in laws]
    longest = max(trajs, key=len)
    header = ["t"] + [f"{law}_{q}" for law in laws for q in ("x_norm", "u_norm", "e_norm")]
    cols = []
    for tr in trajs:
        vals = np.column_stack([np.linalg.norm(tr.x, axis=1), np.linalg.norm(tr.u, axis=1), tr.column("e_norm")])
        cols.append(vals)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i, t in enumerate(longest.t):
            row = ["%.17g" % t]
            for vals in cols:
                row += ["%.17g" % v for v in vals[i]] if i < len(vals) else ["", "", ""]
            fh.write(",".join(row) + "\n")


def parse_axis(text):
    """``name=start:stop:count`` or ``name=v1,v2,...``."""
    if "=" not in text:
        raise UsageError(f"axis {text!r} must look like name=start:stop:count or name=v1,v2")
    name, spec = text.split("=", 1)
    name = name.strip()
    if name not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {name!r}; choose from {', '.join(SWEEP_AXES)}")
    try:
        if ":" in spec:
            a, b, c = spec.split(":")
            values = np.linspace(float(a), float(b), int(c))
        else:
            values = np.array([float(v) for v in spec.split(",") if v.strip()])
    except ValueError as exc:
        raise UsageError(f"bad axis values in {text!r}") from exc
    if values.size == 0:
        raise UsageError(f"axis {name!r} has no values")
    return name, values


def apply_cell(base, cell):
    """Scenario mapping with one sweep cell's values substituted."""
    d = json.loads(json.dumps(base))
    for name, v in cell.items():
        if name in ("u_bar", "x_bar"):
            d["constraints"][name] = v
        elif name == "d_bar":
            d["constraints"]["d_bar"] = v
            d["signals"]["disturbance"]["cap"] = v
        elif name == "gamma_scale":
            for sec in ("gains", "baseline"):
                for k in ("gamma_x", "gamma_r"):
                    d[sec][k] = (np.asarray(d[sec][k]) * v).tolist()
        elif name == "x0_scale":
            d["sim"]["x0"] = (np.asarray(d["sim"]["x0"]) * v).tolist()
            d["sim"]["xr0"] = (np.asarray(d["sim"]["xr0"]) * v).tolist()
    return d


def sweep_cell(base, cell, law, simulate, engine="auto"):
    """Evaluate one cell; returns a flat dict (picklable, for worker processes)."""
    row = dict(cell)
    try:
        sc = cfgmod.parse_scenario(apply_cell(base, cell))
    except ConfigError as exc:
        row.update(valid=False, error=str(exc))
        return row
    rep = feasibility_report(sc.sim_config("blf"))
    row.update(valid=True, c1_satisfied=rep.c1_satisfied, c1_margin=rep.c1_margin, alpha=rep.alpha, beta=rep.beta)
    if simulate:
        try:
            _, m, reason = _run(sc.sim_config(law), True, engine)
            row.update(
                max_x_norm=m.max_x_norm,
                max_u_norm=m.max_u_norm,
                max_e_norm=m.max_e_norm,
                state_constraint_ok=m.state_constraint_ok,
                input_constraint_ok=m.input_constraint_ok,
                aborted=bool(reason),
            )
        except ValueError as exc:
            row.update(error=str(exc))
    return row


SWEEP_FIELDS = (
    "valid",
    "c1_satisfied",
    "c1_margin",
    "alpha",
    "beta",
    "max_x_norm",
    "max_u_norm",
    "max_e_norm",
    "state_constraint_ok",
    "input_constraint_ok",
    "aborted",
    "error",
)


def cmd_sweep(args):
    scenario = _apply_overrides(cfgmod.resolve(args.config), args)
    axes = [parse_axis(a) for a in args.axis]
    if not 1 <= len(axes) <= 2:
        raise UsageError("sweep takes one or two --axis options")
    if len(axes) == 2 and axes[0][0] == axes[1][0]:
        raise UsageError("sweep axes must differ")
    law = args.law or scenario.law
    out = output_dir(args)
    base = scenario.to_dict()
    rep = feasibility_report(scenario.sim_config("blf"))
    write_manifest(out, scenario, "sweep", rep, {"axes": {n: v for n, v in axes}, "law": law, "simulate": args.simulate})
    names = [n for n, _ in axes]
    cells = [dict(zip(names, map(float, combo))) for combo in itertools.product(*(v for _, v in axes))]
    if args.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(sweep_cell, [base] * len(cells), cells, [law] * len(cells), [args.simulate] * len(cells)))
    else:
        rows = [sweep_cell(base, c, law, args.simulate, args.engine) for c in cells]

    fields = names + [f for f in SWEEP_FIELDS if any(f in r for r in rows)]
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r.get(f, "")) if f in r else "" for f in fields])

    metric = "max_u_norm" if args.simulate else "c1_margin"
    vals = np.array([r.get(metric, math.nan) if r.get("valid") else math.nan for r in rows], dtype=float)
    if len(axes) == 1:
        series = {"c1_margin": [r.get("c1_margin", math.nan) for r in rows]}
        if args.simulate:
            series = {k: [r.get(k, math.nan) for r in rows] for k in ("max_x_norm", "max_u_norm", "max_e_norm")}
        plotting.plot_curve(axes[0][1], series, out / "sweep.svg", names[0], title=f"{scenario.name} sweep")
    else:
        (nx_, xv), (ny, yv) = axes
        Z = vals.reshape(len(xv), len(yv)).T
        plotting.plot_heatmap(xv, yv, Z, out / "sweep.svg", nx_, ny, title=metric)
    print(f"cells = {len(rows)}")
    print(f"feasible_cells = {sum(1 for r in rows if r.get('c1_satisfied'))}")
    print(f"sweep = {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_preset(args):
    if args.name is None:
        print("\n".join(cfgmod.PRESETS))
        return EXIT_OK
    sys.stdout.write(cfgmod.preset_text(args.name))
    return EXIT_OK


def _range(text):
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from exc
    return a, b


def build_parser():
    p = argparse.ArgumentParser(prog="cmrac", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=True):
        sp.add_argument("config", help=f"scenario file or preset name ({', '.join(cfgmod.PRESETS)})")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./cmrac-output)")
        if sim:
            sp.add_argument("--t-end", type=float, help="override the simulated horizon [s]")
            sp.add_argument("--dt", type=float, help="override the integration step [s]")
            sp.add_argument("--engine", choices=("auto", "numba", "numpy"), default="auto", help=argparse.SUPPRESS)

    f = sub.add_parser("feasibility", help="evaluate the feasibility condition and special cases")
    common(f, sim=False)
    f.add_argument("--region", action="store_true", help="write a (x_bar, u_bar) region grid as CSV and SVG")
    f.add_argument("--u-range", type=_range, help="u_bar range lo:hi for the region grid")
    f.add_argument("--x-range", type=_range, help="x_bar range lo:hi for the region grid")
    f.add_argument("--resolution", type=int, default=101)
    f.add_argument("--alpha", type=float, help="override alpha for the region grid")
    f.add_argument("--beta", type=float, help="override beta for the region grid")
    f.set_defaults(func=cmd_feasibility)

    s = sub.add_parser("simulate", help="run one closed-loop simulation")
    common(s)
    s.add_argument("--law", choices=("blf", "classical"))
    s.add_argument("--override-feasibility", action="store_true")
    s.add_argument("--plots", action="store_true", help="write norm plots as SVG")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run the barrier and classical laws on the same scenario")
    common(c)
    c.add_argument("--override-feasibility", action="store_true")
    c.add_argument("--plots", action="store_true", help="write overlay plots as SVG")
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="grid over one or two parameters")
    common(w)
    w.add_argument("--axis", action="append", required=True, help=f"name=start:stop:count or name=v1,v2 ({', '.join(SWEEP_AXES)})")
    w.add_argument("--simulate", action="store_true", help="also simulate every cell")
    w.add_argument("--law", choices=("blf", "classical"))
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    pr = sub.add_parser("preset", help="list presets or print one")
    pr.add_argument("name", nargs="?", choices=cfgmod.PRESETS)
    pr.set_defaults(func=cmd_preset)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CmracError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
