"""Run the three-method benchmark and print the summary table.

    python3 scripts/run_benchmark.py [--fast] [--trials N] [--workers W] [--out DIR]
"""

import argparse
import time
from pathlib import Path

from crossent.experiments import load_spec, run_experiment

SPECS = Path(__file__).parent / "specs"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--fast", action="store_true", help="20 states, 200 trials")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--workers", type=int, default=0, help="0 uses every core")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    name = "benchmark_fast" if args.fast else "benchmark"
    overrides = [f"workers={args.workers}"]
    if args.trials:
        overrides.append(f"n_trials={args.trials}")
    spec = load_spec(SPECS / f"{name}.txt", overrides)
    out = Path(args.out or f"results/{name}")

    start = time.perf_counter()
    status = run_experiment(spec, out)
    print((out / "summary.csv").read_text(), end="")
    print(f"# {time.perf_counter() - start:.1f}s, artifacts in {out}")
    return status


if __name__ == "__main__":
    raise SystemExit(main())
