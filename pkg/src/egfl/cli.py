"""
``egfl`` command line: design, analyze, simulate and sweep.

Every invocation writes ``status.json`` and ``manifest.json`` into the
output directory, whatever the outcome.  Exit codes: 0 all checks pass,
1 a check failed, 2 invalid input, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError
from .config import ConfigError, load_config, parse_scenario, parse_setup, resolve_config_path, set_path
from .design import DesignError
from .plant import PlantError
from .ratcore import default_grid
from .runner import analysis_bundle, design_report, simulation_checks, simulation_metrics
from .sim import DivergenceError, SimError, run_scenario

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3
STATUS_TEXT = {EXIT_PASS: "pass", EXIT_FAIL: "check_failure", EXIT_INPUT: "invalid_input", EXIT_DIVERGED: "divergence"}
INPUT_ERRORS = (ConfigError, DesignError, PlantError, AnalysisError, SimError, ValueError, KeyError, TypeError)


# output helpers -----------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serialisable: {type(o)}")


def _clean(o):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(float(o)):
        return None
    return o


def write_atomic(path: Path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    write_atomic(path, json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n")


def write_table(path: Path, table: dict) -> None:
    keys = list(table)
    cols = np.column_stack([np.asarray(table[k], dtype=float) for k in keys])
    buf = io.StringIO()
    np.savetxt(buf, cols, delimiter=",", header=",".join(keys), comments="", fmt="%.9g")
    write_atomic(path, buf.getvalue())


def write_rows(path: Path, rows: list[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    write_atomic(path, buf.getvalue())


# commands ----------------------------------------------------------------------------------

def _grid(args):
    return default_grid(args.grid_points) if args.grid_points else default_grid()


def cmd_design(cfg: dict, out: Path, args) -> tuple[int, list, dict]:
    setup = parse_setup(cfg)
    rep, checks = design_report(setup, _grid(args))
    write_json(out / "design.json", rep)
    return (EXIT_PASS if all(c.passed for c in checks) else EXIT_FAIL), checks, {}


def cmd_analyze(cfg: dict, out: Path, args) -> tuple[int, list, dict]:
    setup = parse_setup(cfg)
    wanted = (cfg.get("analysis") or {}).get("checks")
    table, rep, checks = analysis_bundle(setup, _grid(args), wanted)
    write_table(out / "analysis.csv", table)
    write_json(out / "analysis.json", rep)
    if not args.no_plots:
        from .plotting import plot_analysis

        plot_analysis(table, out)
    return (EXIT_PASS if all(c.passed for c in checks) else EXIT_FAIL), checks, {}


def cmd_simulate(cfg: dict, out: Path, args) -> tuple[int, list, dict]:
    setup = parse_setup(cfg)
    scen = parse_scenario(cfg, setup)
    try:
        trace = run_scenario(scen)
        code = None
    except DivergenceError as exc:
        trace = exc.trace
        code = EXIT_DIVERGED
    trace.to_csv(out / "trace.csv.tmp")
    os.replace(out / "trace.csv.tmp", out / "trace.csv")
    metrics = simulation_metrics(trace, scen)
    checks = simulation_checks(trace, scen, (cfg.get("scenario") or {}).get("checks"))
    write_json(out / "metrics.json", {"metrics": metrics, "checks": [c.as_dict() for c in checks]})
    if not args.no_plots and len(trace):
        from .plotting import plot_trace

        plot_trace(trace, out)
    if code is None:
        code = EXIT_PASS if all(c.passed for c in checks) else EXIT_FAIL
    return code, checks, metrics


COMMANDS = {"design": cmd_design, "analyze": cmd_analyze, "simulate": cmd_simulate}


def _sweep_job(job):
    """Run one sweep member in its own directory; returns the summary row."""
    idx, cfg, command, out, keys, values, opts = job
    run_dir = Path(out) / f"run_{idx:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    args = argparse.Namespace(**opts)
    row = {"run": idx, **dict(zip(keys, values))}
    try:
        code, checks, metrics = COMMANDS[command](cfg, run_dir, args)
    except INPUT_ERRORS as exc:
        code, checks, metrics = EXIT_INPUT, [], {"error": str(exc)}
    write_json(run_dir / "status.json", {"exit_code": code, "status": STATUS_TEXT[code],
                                         "checks": [c.as_dict() for c in checks]})
    row["exit_code"] = code
    for k, v in metrics.items():
        if isinstance(v, (int, float, str, bool)) or v is None:
            row[k] = v
    return row


def _threads() -> int:
    raw = os.environ.get("EGFL_THREADS")
    if raw is None:
        return max(1, min(os.cpu_count() or 1, 8))
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError("EGFL_THREADS must be a positive integer") from exc
    if n < 1:
        raise ConfigError("EGFL_THREADS must be a positive integer")
    return n


def cmd_sweep(cfg: dict, out: Path, args) -> tuple[int, list, dict]:
    spec = dict(cfg.get("sweep") or {})
    if args.param:
        spec["parameters"] = args.param
    if args.values is not None:
        spec["values"] = json.loads(args.values)
    keys = spec.get("parameters") or ([spec["parameter"]] if "parameter" in spec else [])
    values = spec.get("values")
    if not keys:
        raise ConfigError("sweep needs at least one parameter path")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep needs a non-empty list of values")
    command = spec.get("command", "simulate")
    if command not in COMMANDS:
        raise ConfigError(f"sweep command must be one of {sorted(COMMANDS)}")
    base = {k: v for k, v in cfg.items() if k != "sweep"}
    jobs = []
    opts = {"grid_points": args.grid_points, "no_plots": args.no_plots}
    for i, v in enumerate(values):
        vs = list(v) if isinstance(v, list) else [v]
        if len(vs) != len(keys):
            raise ConfigError(f"sweep value {v!r} does not match {len(keys)} parameter(s)")
        c = base
        for k, x in zip(keys, vs):
            c = set_path(c, k, x)
        jobs.append((i, c, command, str(out), keys, vs, opts))
    n = min(_threads(), len(jobs))
    if n == 1:
        rows = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    write_rows(out / "sweep.csv", rows)
    if not args.no_plots:
        from .plotting import plot_sweep

        for metric in ("rocof_max", "vcq_peak_volt", "iga_h3_amp", "probe_gain", "tracking_error_frac"):
            plot_sweep(rows, keys, metric, out)
    codes = [r["exit_code"] for r in rows]
    if EXIT_INPUT in codes:
        code = EXIT_INPUT
    elif EXIT_DIVERGED in codes:
        code = EXIT_DIVERGED
    elif EXIT_FAIL in codes:
        code = EXIT_FAIL
    else:
        code = EXIT_PASS
    return code, [], {"runs": len(rows)}


COMMANDS_ALL = {**COMMANDS, "sweep": cmd_sweep}


# entry point ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egfl", description="Design, analyze and simulate grid-following inverter control.")
    p.add_argument("--version", action="version", version=f"egfl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("design", "analyze", "simulate", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config path or bundled preset name")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--grid-points", type=int, default=None, help="frequency grid size for analysis")
        sp.add_argument("--seedless", action="store_true", help="record that no random seed is involved")
        sp.add_argument("--no-plots", action="store_true", help="skip figure rendering")
        if name == "sweep":
            sp.add_argument("--param", action="append", help="parameter path (repeatable)")
            sp.add_argument("--values", default=None, help="JSON list of values")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    checks, extra, message = [], {}, ""
    cfg_path, cfg = None, None
    try:
        if args.grid_points is not None and args.grid_points < 10:
            raise ConfigError("--grid-points must be at least 10")
        cfg_path = resolve_config_path(args.config)
        cfg = load_config(args.config)
        code, checks, extra = COMMANDS_ALL[args.command](cfg, out, args)
    except INPUT_ERRORS as exc:
        code, message = EXIT_INPUT, f"{type(exc).__name__}: {exc}"
    status = {
        "command": args.command,
        "exit_code": code,
        "status": STATUS_TEXT[code],
        "message": message,
        "checks": [c.as_dict() for c in checks],
    }
    if args.command == "simulate" and extra:
        status["metrics"] = {k: v for k, v in extra.items() if not isinstance(v, (list, dict))}
    write_json(out / "status.json", status)
    write_json(out / "manifest.json", {
        "tool": "egfl",
        "version": __version__,
        "command": args.command,
        "config_path": str(cfg_path) if cfg_path else str(args.config),
        "resolved_config": cfg,
        "output_dir": str(out.resolve()),
        "options": {"grid_points": args.grid_points, "seedless": args.seedless, "no_plots": args.no_plots},
        "wall_clock_s": time.perf_counter() - t0,
    })
    if message:
        print(message, file=sys.stderr)
    print(f"egfl {args.command}: {STATUS_TEXT[code]} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
