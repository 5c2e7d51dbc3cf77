"""Run the small counterexample experiments and print one summary line each.

    python3 scripts/run_counterexamples.py [--out results]
"""

import argparse
import csv
from pathlib import Path

from crossent.experiments import load_spec, run_experiment

SPECS = Path(__file__).parent / "specs"
NAMES = ["example1", "example2", "example2_expectation", "example2_smooth",
         "sequence_reject", "sequence_classical"]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="results")
    args = parser.parse_args()
    status = 0
    for name in NAMES:
        out = Path(args.out) / name
        status |= run_experiment(load_spec(SPECS / f"{name}.txt"), out)
        with open(out / "summary.csv") as fh:
            for row in csv.DictReader(fh):
                print(f"{name:22s} {row['method']:18s} mean={row['mean']:>8s} "
                      f"std={row['std']:>8s} mean_gain={row['mean_gain']}")
    return status


if __name__ == "__main__":
    raise SystemExit(main())
