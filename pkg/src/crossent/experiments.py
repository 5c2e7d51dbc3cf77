"""Config-driven experiment runner.

An experiment spec is a flat ``key = value`` text file (``#`` starts a
comment). Unset keys take the defaults below; ``alpha``, ``n_trials`` and
``importance`` default per experiment (the benchmark smooths with
``alpha = 0.9`` over 1000 trials with ``R(v) = v``; the small examples run
unsmoothed, once, with the shifted map).

Artifacts written to the output directory:

``summary.csv``     one row per method: name, mean, variance, std, trials, mean_gain
``trials.json``     per-trial records
``traces/*.jsonl``  one record per iteration
``manifest.json``   resolved spec, master seed, per-trial seeds, artifact list, status

No timestamps are written, so identical specs give byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from crossent import benchmark
from crossent.analysis import (
    VARIANCE_MODES,
    BenchmarkSummary,
    brute_force_optimum,
    expected_gain,
    round_sig,
    summarize,
    truncated_expected_length,
)
from crossent.engine import (
    IMPORTANCE_MAPS,
    CERunConfig,
    Quantile,
    RunTrace,
    Smooth,
    run_ce,
    run_ce_classical,
    run_ce_expectation,
    run_ce_rejection,
)
from crossent.families import CategoricalParams, ConditionalCategoricalParams, GeometricStoppingParams
from crossent.problems import SIMPLEX_MODES, Problem, example1, example2, sequence_problem

OUTPUT_ROOT_ENV = "CROSSENT_OUTPUT_ROOT"
EXPERIMENTS = ("example1", "example2", "sequence-reject", "sequence-classical", "benchmark", "custom")
SINGLE_METHODS = ("basic", "expectation", "smooth")
TRACE_DIGITS = 6


class SpecError(ValueError):
    """Invalid experiment spec; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str = "benchmark"
    method: str = "basic"
    n_samples: int = 100
    k_system_samples: int = 100
    rho: float = 0.1
    alpha: float | None = None
    seed: int = 0
    max_iters: int = 1000
    eps: float = 1e-6
    patience: int = 5
    importance: str | None = None
    beta: float = 1.0
    floor: float | None = None
    n_states: int = 100
    n_trials: int | None = None
    methods: tuple[str, ...] = benchmark.METHODS
    simplex: str = "uniform"
    variance: str = "population"
    horizon: int = 2
    lambda0: float = 0.5
    problem_file: str | None = None
    output_dir: str | None = None
    workers: int = 0
    trace_limit: int = 10

    def resolved(self) -> "ExperimentSpec":
        bench = self.experiment == "benchmark"
        return replace(
            self,
            alpha=(0.9 if bench else 0.0) if self.alpha is None else self.alpha,
            n_trials=(1000 if bench else 1) if self.n_trials is None else self.n_trials,
            importance=("identity" if bench else "shifted") if self.importance is None else self.importance,
        )

    def validate(self) -> None:
        def bad(name, why):
            raise SpecError(f"{name}: {why} (got {getattr(self, name)!r})")

        if self.experiment not in EXPERIMENTS:
            bad("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        if self.method not in SINGLE_METHODS:
            bad("method", f"must be one of {', '.join(SINGLE_METHODS)}")
        for name in ("n_samples", "k_system_samples", "max_iters", "patience", "horizon"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if not 0 < self.rho < 1:
            bad("rho", "must lie in (0, 1)")
        if self.alpha is not None and not 0 <= self.alpha < 1:
            bad("alpha", "must lie in [0, 1)")
        if not self.eps > 0:
            bad("eps", "must be positive")
        if self.floor is not None and self.floor < 0:
            bad("floor", "must be nonnegative")
        if self.n_trials is not None and self.n_trials < 1:
            bad("n_trials", "must be >= 1")
        if self.n_states < 2:
            bad("n_states", "must be >= 2")
        if not 0 <= self.seed < 2**64:
            bad("seed", "must be a 64-bit unsigned integer")
        if not 0 <= self.lambda0 <= 1:
            bad("lambda0", "must lie in [0, 1]")
        if self.importance is not None and self.importance not in IMPORTANCE_MAPS:
            bad("importance", f"must be one of {', '.join(IMPORTANCE_MAPS)}")
        if not self.methods or set(self.methods) - set(benchmark.METHODS):
            bad("methods", f"must be a nonempty subset of {', '.join(benchmark.METHODS)}")
        if self.simplex not in SIMPLEX_MODES:
            bad("simplex", f"must be one of {', '.join(SIMPLEX_MODES)}")
        if self.variance not in VARIANCE_MODES:
            bad("variance", f"must be one of {', '.join(VARIANCE_MODES)}")
        if self.workers < 0 or self.trace_limit < 0:
            bad("workers" if self.workers < 0 else "trace_limit", "must be >= 0")
        if self.experiment == "custom" and not self.problem_file:
            bad("problem_file", "is required for custom experiments")


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentSpec)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if "None" in kind and raw.lower() in ("", "none"):
        return None
    try:
        if kind.startswith("int"):
            return int(raw, 0)
        if kind.startswith("float"):
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise SpecError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def parse_assignments(lines, spec: ExperimentSpec | None = None) -> ExperimentSpec:
    """Apply ``key = value`` lines (comments and blanks ignored) on top of ``spec``."""
    values = {}
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise SpecError(f"line {number}: expected 'key = value', got {line!r}")
        if key not in _FIELD_TYPES:
            raise SpecError(f"{key}: unknown field")
        values[key] = _convert(key, value)
    return replace(spec or ExperimentSpec(), **values)


def load_spec(path: str | os.PathLike, overrides=()) -> ExperimentSpec:
    text = Path(path).read_text()
    spec = parse_assignments(text.splitlines())
    spec = parse_assignments(overrides, spec)
    spec.validate()
    return spec


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "results"))


def output_dir_for(spec: ExperimentSpec) -> Path:
    if spec.output_dir is None:
        return output_root() / spec.experiment
    path = Path(spec.output_dir)
    return path if path.is_absolute() else output_root() / path


def _run_config(spec: ExperimentSpec, seed: int, method: str) -> CERunConfig:
    scheme = (Smooth(spec.importance, beta=spec.beta, rho=spec.rho) if method == "smooth"
              else Quantile(spec.rho))
    return CERunConfig(
        n_samples=spec.n_samples,
        k_system_samples=spec.k_system_samples,
        scheme=scheme,
        alpha=spec.alpha,
        max_iters=spec.max_iters,
        convergence_eps=spec.eps,
        convergence_patience=spec.patience,
        seed=seed,
        probability_floor=spec.floor,
    )


def _benchmark_settings(spec: ExperimentSpec) -> benchmark.BenchmarkSettings:
    return benchmark.BenchmarkSettings(
        n_states=spec.n_states, n_trials=spec.n_trials, n_samples=spec.n_samples,
        k_system_samples=spec.k_system_samples, rho=spec.rho, alpha=spec.alpha,
        importance=spec.importance, beta=spec.beta, max_iters=spec.max_iters,
        convergence_eps=spec.eps, convergence_patience=spec.patience,
        probability_floor=spec.floor, methods=tuple(spec.methods), simplex=spec.simplex,
        variance=spec.variance, seed=spec.seed, workers=spec.workers,
    )


def _single_run(spec: ExperimentSpec, seed: int):
    """One seeded run of a non-benchmark experiment: (label, trace, gain, reference gain)."""
    exp = spec.experiment
    if exp in ("sequence-reject", "sequence-classical"):
        problem = sequence_problem(spec.horizon)
        config = _run_config(spec, seed, "basic")
        best = truncated_expected_length(1.0, spec.horizon)
        if exp == "sequence-reject":
            trace = run_ce_rejection(problem, GeometricStoppingParams(spec.lambda0), config)
            label = "CE with rejection"
        else:
            trace = run_ce_classical(problem, GeometricStoppingParams(spec.lambda0, spec.horizon), config)
            label = "Classical CE"
        return label, trace, expected_gain(problem, trace.final), best
    problem = load_problem(spec)
    if problem.conditional:
        init = ConditionalCategoricalParams.uniform(problem.n_states, problem.n_decisions)
    else:
        init = CategoricalParams.uniform(problem.n_decisions)
    config = _run_config(spec, seed, spec.method)
    if spec.method == "expectation":
        trace = run_ce_expectation(problem, init, config)
    else:
        trace = run_ce(problem, init, config)
    label = benchmark.METHOD_LABELS[spec.method]
    return label, trace, expected_gain(problem, trace.final), brute_force_optimum(problem).gain


def load_problem(spec: ExperimentSpec) -> Problem:
    if spec.experiment == "example1":
        return example1()
    if spec.experiment == "example2":
        return example2()
    return Problem.from_text(Path(spec.problem_file).read_text())


class _Writer:
    def __init__(self, root: Path):
        self.root = root
        self.artifacts: list[str] = []

    def write(self, name: str, text: str) -> None:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.artifacts.append(name)

    def trace(self, name: str, trace: RunTrace) -> None:
        self.write(f"traces/{name}.jsonl", trace.to_jsonl(digits=TRACE_DIGITS))


def _spec_dict(spec: ExperimentSpec) -> dict:
    out = asdict(spec)
    out["methods"] = list(spec.methods)
    return {k: round_sig(v) for k, v in out.items()}


def run_experiment(spec: ExperimentSpec, out_dir: Path | None = None) -> int:
    """Run ``spec`` and write its artifacts. Returns 0 on success, 1 on runtime failure."""
    spec.validate()
    spec = spec.resolved()
    root = Path(out_dir) if out_dir is not None else output_dir_for(spec)
    root.mkdir(parents=True, exist_ok=True)
    writer = _Writer(root)
    manifest = {
        "spec": _spec_dict(spec),
        "master_seed": spec.seed,
        "seed_derivation": "trial_seed = splitmix64(master_seed + (trial + 1) * 0x9E3779B97F4A7C15 mod 2^64)",
        "trials": [{"trial": t, "seed": benchmark.derive_seed(spec.seed, t)} for t in range(spec.n_trials)],
        "status": "ok",
    }
    try:
        if spec.experiment == "benchmark":
            summary = _run_benchmark(spec, writer)
        else:
            summary = _run_repeated(spec, writer)
        writer.write("summary.csv", summary.to_csv())
        writer.write("trials.json", summary.to_json())
        status = 0
    except Exception as exc:  # noqa: BLE001 - reported in the manifest
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["partial"] = True
        status = 1
    manifest["artifacts"] = list(writer.artifacts)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return status


def _run_benchmark(spec: ExperimentSpec, writer: _Writer) -> BenchmarkSummary:
    settings = _benchmark_settings(spec)
    results = benchmark.run_trials(settings, trace_limit=spec.trace_limit)
    for r in results:
        for method, trace in r.traces.items():
            writer.trace(f"{method}_trial{r.trial:04d}", trace)
    return benchmark.summarize_trials(settings, results)


def _run_repeated(spec: ExperimentSpec, writer: _Writer) -> BenchmarkSummary:
    if spec.experiment in ("example1", "example2"):
        writer.write("problem.txt", load_problem(spec).to_text())
    records, percentages, label = [], [], ""
    for t in range(spec.n_trials):
        seed = benchmark.derive_seed(spec.seed, t)
        label, trace, gain, best = _single_run(spec, seed)
        if t < spec.trace_limit:
            writer.trace(f"trial{t:04d}", trace)
        percentages.append(gain / best)
        records.append({
            "trial": t,
            "seed": seed,
            "percentage": gain / best,
            "gain": gain,
            "oracle_gain": best,
            "iterations": trace.n_iterations,
            "termination": trace.termination,
            "final_params": [float(v) for v in trace.final.vector()],
        })
    method = summarize(percentages, label, spec.variance, records)
    return BenchmarkSummary([method])
