"""Run a scenario file through every listed check and print a summary table.

    python3 scripts/run_suite.py [configs/paper-suite.yaml] [--out runs/suite]
"""

import argparse
import json
import sys
from pathlib import Path

from lbregularity.cli import run_scenario

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=str(ROOT / "configs" / "paper-suite.yaml"))
    ap.add_argument("--out", default="runs/suite")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()

    status = run_scenario(args.config, args.out, seed=args.seed)
    summary = json.loads((Path(args.out) / "summary.json").read_text())
    width = max(len(r["check"]) for r in summary["results"])
    print()
    for r in summary["results"]:
        tag = "PASS" if r["passed"] else ("FAIL" if r["asserted"] else "info")
        print(f"{r['check']:<{width}}  {tag}  {r['sup_or_violations']}")
    sys.exit(status)


if __name__ == "__main__":
    main()
