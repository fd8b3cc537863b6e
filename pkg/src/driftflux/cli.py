"""Command-line scenario runner.

    driftflux run SCENARIO.ini [--output-dir DIR] [--seed N]

Exit codes: 0 success, 2 configuration error, 3 precondition rejection,
4 solver fault, 5 acceptance threshold missed.  Without ``--output-dir`` the
run goes to ``$DRIFTFLUX_OUTPUT_ROOT/<scenario stem>`` (default root: ``runs``).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import load_scenario
from .diagnostics import write_csv
from .errors import ConfigError, ParameterError, RecipeError, SolverFault
from .initial_data import save_state_snapshot
from .scenarios import prepare, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_FAULT, EXIT_ACCEPTANCE = 0, 2, 3, 4, 5
OUTPUT_ROOT_ENV = "DRIFTFLUX_OUTPUT_ROOT"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def fault_record(exc: SolverFault):
    rec = {"kind": exc.kind, "type": type(exc).__name__, "message": str(exc), "time": exc.time}
    for attr in ("location", "value", "bound"):
        if hasattr(exc, attr):
            rec[attr] = getattr(exc, attr)
    return rec


def output_dir_for(sc, path, override=None) -> Path:
    if override:
        return Path(override)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / (sc.output_dir or Path(path).stem)


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])


def run(path, output_dir=None, seed=None, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    # everything that can reject the run happens before the output directory exists
    try:
        sc = load_scenario(path)
        if seed is not None:
            if seed < 0:
                raise ConfigError("--seed must be nonnegative")
            sc = dataclasses.replace(sc, seed=seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except ParameterError as exc:
        print(f"precondition rejected: {exc}", file=err)
        return EXIT_PRECONDITION
    try:
        c, initial = prepare(sc)
    except (ParameterError, RecipeError) as exc:
        print(f"precondition rejected: {exc}", file=err)
        return EXIT_PRECONDITION

    dest = output_dir_for(sc, path, output_dir)
    dest.mkdir(parents=True, exist_ok=True)
    fault = None
    try:
        outcome = run_scenario(sc, c, initial)
        fault = outcome.fault
    except SolverFault as exc:
        fault, outcome = exc, None
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG

    files = []
    records = outcome.records if outcome else getattr(getattr(fault, "result", None), "records", [])
    if records:
        write_csv(records, dest / "diagnostics.csv")
        files.append("diagnostics.csv")
    if outcome:
        for name, (header, rows) in outcome.tables.items():
            _write_table(dest / f"{name}.csv", header, rows)
            files.append(f"{name}.csv")
        if sc.snapshots:
            for label, st in outcome.states:
                if st is not None:
                    save_state_snapshot(dest / "snapshots" / label, st)
                    files.append(f"snapshots/{label}")

    if fault is not None:
        code = EXIT_FAULT
    elif outcome.passed:
        code = EXIT_OK
    else:
        code = EXIT_ACCEPTANCE
    manifest = {
        "scenario": sc.echo(),
        "source": str(path),
        "versions": {"driftflux": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "exit_code": code,
        "passed": bool(outcome.passed) if outcome else False,
        "metrics": outcome.metrics if outcome else {},
        "monitor_status": outcome.monitor_status if outcome else None,
        "fault": fault_record(fault) if fault is not None else None,
        "files": files,
    }
    (dest / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")

    status = {EXIT_OK: "PASS", EXIT_FAULT: "FAULT", EXIT_ACCEPTANCE: "FAIL"}[code]
    print(f"{sc.name}: {status} -> {dest}", file=out)
    if fault is not None:
        print(f"  fault: {fault}", file=out)
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="driftflux", description="Drift-flux two-phase flow verification runner")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("scenario", help="path to the scenario .ini file")
    r.add_argument("--output-dir", help="directory for artifacts (overrides the output root)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.scenario, args.output_dir, args.seed)


if __name__ == "__main__":
    sys.exit(main())
