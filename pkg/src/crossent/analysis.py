"""Closed forms, brute-force oracles and benchmark statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from crossent.errors import ContractError
from crossent.families import (
    CategoricalParams,
    ConditionalCategoricalParams,
    FamilyParams,
    GeometricStoppingParams,
)
from crossent.problems import Problem, SequenceProblem


def truncated_expected_length(lam: float, horizon: int) -> float:
    """Mean length of the sequence law conditioned on ``t <= horizon``.

    ``sum_t t * lam**(t-1) / sum_t lam**(t-1)``; the limit at ``lam = 1`` is
    ``(horizon + 1) / 2``.
    """
    if not 0.0 <= lam <= 1.0 or horizon < 1:
        raise ContractError("need lam in [0, 1] and horizon >= 1")
    if lam == 1.0:
        return (horizon + 1) / 2
    if lam == 0.0:
        return 1.0
    powers = [lam ** (t - 1) for t in range(1, horizon + 1)]
    return math.fsum(t * w for t, w in zip(range(1, horizon + 1), powers)) / math.fsum(powers)


def truncated_expectation_argmax(horizon: int, step: float = 1e-4) -> float:
    """Grid-scan maximizer of ``truncated_expected_length(., horizon)`` over ``[0, 1]``."""
    if horizon < 2:
        raise ContractError("the scan is informative only for horizon >= 2")
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    values = [truncated_expected_length(float(lam), horizon) for lam in grid]
    return float(grid[int(np.argmax(values))])


@dataclass(frozen=True)
class OracleResult:
    """Best decision (or ``x -> d`` map as a tuple for conditional problems) and its gain."""

    decision: int | tuple[int, ...]
    gain: float


def brute_force_optimum(problem: Problem) -> OracleResult:
    """Enumerate decisions; ties go to the smaller decision index."""
    if problem.conditional:
        policy = tuple(int(d) for d in np.argmax(problem.rewards, axis=0))
        best = problem.rewards.max(axis=0)
        return OracleResult(policy, float(np.dot(problem.system_law, best)))
    gains = problem.decision_gains()
    d = int(np.argmax(gains))
    return OracleResult(d, float(gains[d]))


def expected_gain(problem: Problem | SequenceProblem, params: FamilyParams) -> float:
    """Exact expected reward of a law, summed over the decision and system sets."""
    if isinstance(problem, SequenceProblem):
        if not isinstance(params, GeometricStoppingParams):
            raise ContractError("sequence problems need GeometricStoppingParams")
        return truncated_expected_length(params.lam, problem.horizon)
    if isinstance(params, ConditionalCategoricalParams):
        if params.table.shape != (problem.n_states, problem.n_decisions):
            raise ContractError("conditional table does not match the problem")
        per_state = np.einsum("xd,dx->x", params.table, problem.rewards)
        return float(np.dot(problem.system_law, per_state))
    if isinstance(params, CategoricalParams):
        if params.n_outcomes != problem.n_decisions:
            raise ContractError("law support does not match the decision set")
        return float(np.dot(params.probs, problem.decision_gains()))
    raise ContractError(f"unsupported family {type(params).__name__}")


def optimal_percentage(problem: Problem, params: FamilyParams) -> float:
    """Expected gain of ``params`` as a fraction of the oracle gain."""
    best = brute_force_optimum(problem).gain
    if best == 0.0:
        raise ContractError("oracle gain is zero; the ratio is undefined")
    return expected_gain(problem, params) / best


@dataclass
class MethodSummary:
    method: str
    mean: float
    variance: float
    std: float
    n_trials: int
    records: list[dict] = field(default_factory=list)


@dataclass
class BenchmarkSummary:
    methods: list[MethodSummary]

    def get(self, name: str) -> MethodSummary:
        for m in self.methods:
            if m.method == name:
                return m
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "mean", "variance", "std", "trials", "mean_gain"])
        for m in self.methods:
            gains = [r["gain"] for r in m.records if "gain" in r]
            mean_gain = fmt(math.fsum(gains) / len(gains)) if gains else ""
            writer.writerow([m.method, fmt(m.mean), fmt(m.variance), fmt(m.std), m.n_trials, mean_gain])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            m.method: {
                "mean": round_sig(m.mean),
                "variance": round_sig(m.variance),
                "std": round_sig(m.std),
                "trials": m.n_trials,
                "records": [{k: round_sig(v) for k, v in r.items()} for r in m.records],
            }
            for m in self.methods
        }
        return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def fmt(value: float) -> str:
    """Six significant digits."""
    return f"{value:.6g}"


def round_sig(value):
    """Round floats (also inside lists) to six significant digits."""
    if isinstance(value, float):
        return float(fmt(value)) if math.isfinite(value) else str(value)
    if isinstance(value, (list, tuple)):
        return [round_sig(v) for v in value]
    return value


VARIANCE_MODES = ("population", "sample")


def summarize(percentages, method: str = "", variance: str = "population",
              records: list[dict] | None = None) -> MethodSummary:
    """Mean and variance of per-trial optimal percentages."""
    values = np.asarray(list(percentages), dtype=float)
    if values.size == 0:
        raise ContractError("cannot summarize an empty list of trials")
    if variance not in VARIANCE_MODES:
        raise ContractError(f"unknown variance mode {variance!r}")
    ddof = 1 if variance == "sample" and values.size > 1 else 0
    mean = math.fsum(values) / values.size
    var = math.fsum((values - mean) ** 2) / (values.size - ddof)
    if records is not None and len(records) != values.size:
        raise ContractError("record count does not match the trial count")
    return MethodSummary(method, mean, var, math.sqrt(var), int(values.size), list(records or []))
