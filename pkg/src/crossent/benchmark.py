"""Randomized three-method comparison against the brute-force oracle.

Each trial draws one random problem and runs basic CE, expectation CE and
smooth-selection CE on it from the uniform law. The reported figure is the
exact expected gain of the final law divided by the oracle gain.

Seeds
-----
``trial_seed = derive_seed(master_seed, trial)`` (SplitMix64 finalizer applied
to ``master_seed + (trial + 1) * 0x9E3779B97F4A7C15``). Within a trial the
problem uses ``derive_seed(trial_seed, 0)`` and method ``m`` (position in
``METHODS``) uses ``derive_seed(trial_seed, m + 1)``, so running a subset of
methods does not change the results of the others.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from crossent.analysis import BenchmarkSummary, brute_force_optimum, expected_gain, summarize
from crossent.engine import CERunConfig, Quantile, RunTrace, Smooth, run_ce, run_ce_expectation
from crossent.errors import ContractError
from crossent.families import CategoricalParams
from crossent.problems import Problem, random_problem

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

METHODS = ("basic", "expectation", "smooth")
METHOD_LABELS = {"basic": "Basic CE", "expectation": "Expectation", "smooth": "Smooth scheme"}


def splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    return splitmix64(master + (index + 1) * GOLDEN_GAMMA)


@dataclass(frozen=True)
class BenchmarkSettings:
    n_states: int = 100
    n_trials: int = 1000
    n_samples: int = 100
    k_system_samples: int = 100
    rho: float = 0.1
    alpha: float = 0.9
    importance: str = "identity"
    beta: float = 1.0
    max_iters: int = 1000
    convergence_eps: float = 1e-6
    convergence_patience: int = 5
    probability_floor: float | None = None
    methods: tuple[str, ...] = METHODS
    simplex: str = "uniform"
    variance: str = "population"
    seed: int = 0
    workers: int = 0  # 0: os.cpu_count()

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ContractError(f"methods must be a nonempty subset of {METHODS}")
        if self.n_trials < 1:
            raise ContractError("n_trials must be >= 1")

    def run_config(self, method: str, seed: int) -> CERunConfig:
        if method == "smooth":
            scheme = Smooth(self.importance, beta=self.beta, rho=self.rho)
        else:
            scheme = Quantile(self.rho)
        return CERunConfig(
            n_samples=self.n_samples,
            k_system_samples=self.k_system_samples,
            scheme=scheme,
            alpha=self.alpha,
            max_iters=self.max_iters,
            convergence_eps=self.convergence_eps,
            convergence_patience=self.convergence_patience,
            seed=seed,
            probability_floor=self.probability_floor,
        )


def run_method(method: str, problem: Problem, config: CERunConfig) -> RunTrace:
    init = CategoricalParams.uniform(problem.n_decisions)
    if method == "expectation":
        return run_ce_expectation(problem, init, config)
    return run_ce(problem, init, config)


def trial_problem(settings: BenchmarkSettings, trial: int) -> Problem:
    trial_seed = derive_seed(settings.seed, trial)
    rng = np.random.default_rng(derive_seed(trial_seed, 0))
    return random_problem(settings.n_states, rng, settings.simplex, seed=trial_seed)


@dataclass
class TrialResult:
    trial: int
    seed: int
    oracle_gain: float
    records: dict[str, dict] = field(default_factory=dict)
    traces: dict[str, RunTrace] = field(default_factory=dict)


def run_trial(settings: BenchmarkSettings, trial: int, keep_traces: bool = False) -> TrialResult:
    problem = trial_problem(settings, trial)
    oracle = brute_force_optimum(problem)
    result = TrialResult(trial, problem.seed, oracle.gain)
    for m, method in enumerate(METHODS):
        if method not in settings.methods:
            continue
        trace = run_method(method, problem, settings.run_config(method, derive_seed(problem.seed, m + 1)))
        gain = expected_gain(problem, trace.final)
        result.records[method] = {
            "trial": trial,
            "seed": problem.seed,
            "percentage": gain / oracle.gain,
            "gain": gain,
            "oracle_gain": oracle.gain,
            "iterations": trace.n_iterations,
            "termination": trace.termination,
        }
        if keep_traces:
            result.traces[method] = trace
    return result


def _run_trial_job(args) -> TrialResult:
    settings, trial, keep = args
    return run_trial(settings, trial, keep)


def run_trials(settings: BenchmarkSettings, trace_limit: int = 0) -> list[TrialResult]:
    """All trials, sorted by index. Traces are kept for the first ``trace_limit`` trials."""
    jobs = [(settings, t, t < trace_limit) for t in range(settings.n_trials)]
    workers = settings.workers or os.cpu_count() or 1
    if workers == 1 or settings.n_trials == 1:
        results = [_run_trial_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return sorted(results, key=lambda r: r.trial)


def summarize_trials(settings: BenchmarkSettings, results: list[TrialResult]) -> BenchmarkSummary:
    methods = []
    for method in METHODS:
        if method not in settings.methods:
            continue
        records = [r.records[method] for r in results]
        methods.append(summarize([rec["percentage"] for rec in records], METHOD_LABELS[method],
                                 settings.variance, records))
    return BenchmarkSummary(methods)


def run_benchmark(settings: BenchmarkSettings) -> BenchmarkSummary:
    return summarize_trials(settings, run_trials(settings))
