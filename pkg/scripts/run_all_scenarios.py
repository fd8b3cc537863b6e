"""Run every scenario file and print a one-line status per run.

    python3 scripts/run_all_scenarios.py [--scenarios DIR] [--out DIR]
"""
import argparse
import io
import sys
import time
from pathlib import Path

from driftflux.cli import run

ROOT = Path(__file__).resolve().parents[1]
EXPECTED = {"near_vacuum": 4}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", default=ROOT / "scenarios", type=Path)
    ap.add_argument("--out", default=ROOT / "runs", type=Path)
    args = ap.parse_args()
    bad = 0
    for path in sorted(args.scenarios.glob("*.ini")):
        t0 = time.perf_counter()
        buf = io.StringIO()
        code = run(path, output_dir=args.out / path.stem, out=buf, err=buf)
        want = EXPECTED.get(path.stem, 0)
        bad += code != want
        print(f"{path.stem:20s} exit {code} (expected {want})  {time.perf_counter() - t0:6.1f}s")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
