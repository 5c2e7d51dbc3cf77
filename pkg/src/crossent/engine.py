"""The CE optimization loop and its variants.

Four drivers share one iteration skeleton (sample, score, weight, refit, mix):

* ``run_ce``: samples ``(d_n, x_n)`` pairs and scores ``V(d_n, x_n)``.
* ``run_ce_expectation``: scores every ``d_n`` against one shared batch of
  ``K`` system samples.
* ``run_ce_rejection``: geometric sequences regenerated until ``t <= T``,
  refit with the untruncated closed form.
* ``run_ce_classical``: sequences drawn from the conditioned law and refit
  with ``truncated_update``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from crossent.errors import ContractError, RunError, SelectionError
from crossent.families import (
    CategoricalParams,
    ConditionalCategoricalParams,
    FamilyParams,
    GeometricStoppingParams,
    WeightedSamples,
    apply_floor,
    mix,
    sample_batch,
    truncated_update,
    weighted_update,
)
from crossent.problems import Problem, SequenceProblem

SHIFT_EPSILON = 1e-9
REJECTION_RETRY_CAP = 10**6


# --------------------------------------------------------------------------
# selection schemes


@dataclass(frozen=True)
class Quantile:
    """Unit weight on the ``ceil(rho * N)`` best samples."""

    rho: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ContractError(f"rho must lie in (0, 1), got {self.rho}")


IMPORTANCE_MAPS = ("identity", "shifted", "batch_shifted", "exp", "step")


@dataclass(frozen=True)
class Smooth:
    """Weight ``R(v_n)`` for a nondecreasing, nonnegative importance map ``R``.

    Named maps:

    ``identity``       ``R(v) = v``
    ``shifted``        ``R(v) = v - lower + 1e-9`` with ``lower`` the smallest
                       reward of the problem (bound by the engine when unset)
    ``batch_shifted``  ``R(v) = v - min(batch) + 1e-9``
    ``exp``            ``R(v) = exp(beta * v)``
    ``step``           1 on the ``ceil(rho * N)`` best values, 0 below (the
                       quantile rule written as a threshold on values)

    ``batch_shifted`` is not a fixed function of ``v``: a batch that misses the
    worst outcomes re-centres the weights, which can reverse the ranking that
    the fixed shift preserves.
    """

    importance: str = "identity"
    beta: float = 1.0
    rho: float = 0.1
    lower: float | None = None

    def __post_init__(self):
        if self.importance not in IMPORTANCE_MAPS:
            raise ContractError(f"unknown importance map {self.importance!r}")

    def bind(self, low: float) -> "Smooth":
        """Fill in the reward lower bound for ``shifted`` if it is unset."""
        if self.importance == "shifted" and self.lower is None:
            return replace(self, lower=float(low))
        return self

    def weights(self, values: np.ndarray) -> np.ndarray:
        if self.importance == "identity":
            return values.astype(float, copy=True)
        if self.importance == "shifted":
            if self.lower is None:
                raise ContractError("the shifted map needs a reward lower bound")
            return values - self.lower + SHIFT_EPSILON
        if self.importance == "batch_shifted":
            return values - values.min() + SHIFT_EPSILON
        if self.importance == "exp":
            return np.exp(self.beta * values)
        return _step_weights(values, self.rho)


SelectionScheme = Union[Quantile, Smooth]


def elite_count(rho: float, n: int) -> int:
    # guard against rho * n landing a rounding error above an integer
    return max(1, math.ceil(rho * n - 1e-9))


def _quantile_weights(values: np.ndarray, rho: float) -> np.ndarray:
    m = elite_count(rho, values.shape[0])
    order = np.argsort(-values, kind="stable")
    weights = np.zeros(values.shape[0])
    weights[order[:m]] = 1.0
    return weights


def _step_weights(values: np.ndarray, rho: float) -> np.ndarray:
    m = elite_count(rho, values.shape[0])
    threshold = np.sort(values)[::-1][m - 1]
    weights = (values > threshold).astype(float)
    # fill the remaining slots with threshold ties, lowest index first
    ties = np.flatnonzero(values == threshold)
    weights[ties[: m - int(weights.sum())]] = 1.0
    return weights


def select_weights(values, scheme: SelectionScheme) -> np.ndarray:
    """Turn ``N`` rewards into ``N`` nonnegative update weights."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.shape[0] < 1:
        raise ContractError("need at least one reward value")
    if isinstance(scheme, Quantile):
        return _quantile_weights(values, scheme.rho)
    weights = scheme.weights(values)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ContractError(f"importance map {scheme.importance!r} gave invalid weights")
    if not weights.sum() > 0:
        raise SelectionError("all smooth weights are zero")
    return weights


def check_importance(scheme: SelectionScheme, low: float, high: float, points: int = 11) -> None:
    """Spot-check that a smooth map is nonnegative and nondecreasing on ``[low, high]``."""
    if isinstance(scheme, Quantile) or scheme.importance in ("batch_shifted", "step"):
        return
    grid = np.linspace(low, high, points)
    w = scheme.weights(grid)
    if np.any(w < 0) or np.any(np.diff(w) < 0):
        raise ContractError(
            f"importance map {scheme.importance!r} is not nonnegative and nondecreasing "
            f"on rewards [{low}, {high}]"
        )


# --------------------------------------------------------------------------
# configuration and traces


@dataclass(frozen=True)
class CERunConfig:
    n_samples: int = 100
    k_system_samples: int = 100
    scheme: SelectionScheme = field(default_factory=Quantile)
    alpha: float = 0.0
    max_iters: int = 1000
    convergence_eps: float = 1e-6
    convergence_patience: int = 5
    seed: int = 0
    probability_floor: float | None = None

    def __post_init__(self):
        if self.n_samples < 1 or self.k_system_samples < 1:
            raise ContractError("n_samples and k_system_samples must be >= 1")
        if not 0.0 <= self.alpha < 1.0:
            raise ContractError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.max_iters < 1 or self.convergence_patience < 1:
            raise ContractError("max_iters and convergence_patience must be >= 1")
        if not self.convergence_eps > 0:
            raise ContractError("convergence_eps must be positive")
        if self.probability_floor is not None and self.probability_floor < 0:
            raise ContractError("probability_floor must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must be a 64-bit unsigned integer")


@dataclass
class IterationRecord:
    iteration: int
    params: FamilyParams
    reward_min: float
    reward_mean: float
    reward_max: float
    threshold: float | None
    weight_sum: float
    n_accepted: int
    n_rejected: int = 0
    error: str | None = None

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / (self.n_accepted + self.n_rejected)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "params": [float(v) for v in self.params.vector()],
            "reward_min": self.reward_min,
            "reward_mean": self.reward_mean,
            "reward_max": self.reward_max,
            "threshold": self.threshold,
            "weight_sum": self.weight_sum,
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "acceptance_rate": self.acceptance_rate,
            "error": self.error,
        }


@dataclass
class RunTrace:
    """Per-iteration records; ``records[i].params`` is the law after iteration ``i``."""

    initial: FamilyParams
    records: list[IterationRecord] = field(default_factory=list)
    termination: str = "max_iters"
    message: str | None = None

    @property
    def final(self) -> FamilyParams:
        return self.records[-1].params if self.records else self.initial

    @property
    def n_iterations(self) -> int:
        return len(self.records)

    def param_path(self) -> np.ndarray:
        """Parameter vectors, initial law first."""
        return np.array([self.initial.vector()] + [r.params.vector() for r in self.records])

    def to_jsonl(self, digits: int | None = None) -> str:
        """One JSON object per iteration; ``digits`` rounds floats to significant digits."""
        lines = []
        for rec in self.records:
            row = rec.to_dict()
            if digits is not None:
                row = _round_floats(row, digits)
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def _round_floats(obj, digits: int):
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}") if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_floats(v, digits) for v in obj]
    return obj


# --------------------------------------------------------------------------
# the loop


def _max_change(old: FamilyParams, new: FamilyParams) -> float:
    return float(np.max(np.abs(old.vector() - new.vector())))


def _threshold(values: np.ndarray, weights: np.ndarray, scheme: SelectionScheme) -> float | None:
    if isinstance(scheme, Quantile):
        return float(values[weights > 0].min())
    return None


def _iterate(init: FamilyParams, config: CERunConfig, rng: np.random.Generator,
             draw: Callable, refit: Callable) -> RunTrace:
    """Shared driver.

    ``draw(params, rng)`` returns ``(outcomes, values, n_rejected)``;
    ``refit(params, samples)`` returns the refitted law before smoothing.
    """
    trace = RunTrace(initial=init)
    params = init
    calm = 0
    for it in range(config.max_iters):
        try:
            outcomes, values, n_rejected = draw(params, rng)
        except RunError as exc:
            trace.termination, trace.message = "error", str(exc)
            return trace
        summary = dict(
            reward_min=float(values.min()),
            reward_mean=float(values.mean()),
            reward_max=float(values.max()),
            n_accepted=int(values.shape[0]),
            n_rejected=int(n_rejected),
        )
        try:
            weights = select_weights(values, config.scheme)
        except SelectionError as exc:
            trace.records.append(IterationRecord(it, params, threshold=None, weight_sum=0.0,
                                                 error=str(exc), **summary))
            calm = 0
            continue
        refitted = refit(params, WeightedSamples(outcomes, weights))
        new = apply_floor(mix(params, refitted, config.alpha), config.probability_floor)
        trace.records.append(IterationRecord(
            it, new, threshold=_threshold(values, weights, config.scheme),
            weight_sum=float(weights.sum()), **summary))
        calm = calm + 1 if _max_change(params, new) < config.convergence_eps else 0
        params = new
        if calm >= config.convergence_patience:
            trace.termination = "converged"
            return trace
    return trace


def _check_compatible(problem: Problem, init: FamilyParams) -> None:
    if problem.conditional:
        if not isinstance(init, ConditionalCategoricalParams):
            raise ContractError("conditional problems need ConditionalCategoricalParams")
        if init.table.shape != (problem.n_states, problem.n_decisions):
            raise ContractError("conditional table shape does not match the problem")
    else:
        if not isinstance(init, CategoricalParams):
            raise ContractError("unconditional problems need CategoricalParams")
        if init.n_outcomes != problem.n_decisions:
            raise ContractError("law support does not match the decision set")


def _bind_scheme(config: CERunConfig, problem: Problem, scale: int = 1) -> CERunConfig:
    # scale: scores are sums of `scale` rewards in the expectation variant
    low, high = problem.reward_bounds()
    low, high = min(low * scale, low), max(high * scale, high)
    scheme = config.scheme
    if isinstance(scheme, Smooth):
        scheme = scheme.bind(low)
        check_importance(scheme, low, high)
    return replace(config, scheme=scheme)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def run_ce(problem: Problem, init: FamilyParams, config: CERunConfig) -> RunTrace:
    """Basic CE on a stochastic objective: one system sample per decision sample."""
    _check_compatible(problem, init)
    config = _bind_scheme(config, problem)
    n = config.n_samples
    cum_law = np.cumsum(problem.system_law)

    def draw(params, rng):
        if problem.deterministic:
            xs = np.zeros(n, dtype=np.int64)
        else:
            xs = np.minimum(np.searchsorted(cum_law, rng.random(n) * cum_law[-1], side="right"),
                            problem.n_states - 1)
        ds = sample_batch(params, rng, n, conditions=xs)
        values = problem.rewards[ds, xs]
        outcomes = np.column_stack((xs, ds)) if problem.conditional else ds
        return outcomes, values, 0

    return _iterate(init, config, make_rng(config.seed), draw, weighted_update)


def run_ce_expectation(problem: Problem, init: FamilyParams, config: CERunConfig) -> RunTrace:
    """CE scoring each ``d_n`` by ``sum_k V(d_n, x_k)`` over one shared batch of ``x_k``."""
    if problem.conditional:
        raise ContractError("the shared-sample expectation needs a system law independent of d")
    _check_compatible(problem, init)
    config = _bind_scheme(config, problem, scale=config.k_system_samples)
    n, k = config.n_samples, config.k_system_samples
    cum_law = np.cumsum(problem.system_law)

    def draw(params, rng):
        ds = sample_batch(params, rng, n)
        xs = np.minimum(np.searchsorted(cum_law, rng.random(k) * cum_law[-1], side="right"),
                        problem.n_states - 1)
        counts = np.bincount(xs, minlength=problem.n_states).astype(float)
        values = (problem.rewards @ counts)[ds]
        return ds, values, 0

    return _iterate(init, config, make_rng(config.seed), draw, weighted_update)


def _check_geometric(init, truncated: bool, problem: SequenceProblem) -> None:
    if not isinstance(init, GeometricStoppingParams):
        raise ContractError("sequence problems need GeometricStoppingParams")
    if truncated and init.horizon != problem.horizon:
        raise ContractError("the classical scheme needs init truncated at the problem horizon")
    if not truncated and init.truncated:
        raise ContractError("the rejection scheme needs an untruncated init")


def run_ce_rejection(problem: SequenceProblem, init: GeometricStoppingParams, config: CERunConfig,
                     retry_cap: int = REJECTION_RETRY_CAP) -> RunTrace:
    """CE with rejection of sequences longer than the horizon; untruncated refit."""
    _check_geometric(init, truncated=False, problem=problem)
    n, horizon = config.n_samples, problem.horizon

    def draw(params, rng):
        lengths = np.zeros(n, dtype=np.int64)
        pending = np.arange(n)
        rejected = 0
        for _ in range(retry_cap):
            if params.lam == 1.0:
                break  # never emits 'end', every draw overruns the horizon
            if params.lam == 0.0:
                trial = np.ones(pending.size, dtype=np.int64)
            else:
                trial = rng.geometric(1.0 - params.lam, size=pending.size)
            ok = trial <= horizon
            lengths[pending[ok]] = trial[ok]
            rejected += int((~ok).sum())
            pending = pending[~ok]
            if pending.size == 0:
                return lengths, lengths.astype(float), rejected
        raise RunError(f"rejection retry cap {retry_cap} exceeded at lam={params.lam}")

    return _iterate(init, config, make_rng(config.seed), draw, weighted_update)


def run_ce_classical(problem: SequenceProblem, init: GeometricStoppingParams,
                     config: CERunConfig) -> RunTrace:
    """CE on the conditioned law ``P(t | t <= T)``."""
    _check_geometric(init, truncated=True, problem=problem)
    n = config.n_samples

    def draw(params, rng):
        lengths = sample_batch(params, rng, n)
        return lengths, lengths.astype(float), 0

    def refit(params, samples):
        return truncated_update(samples, problem.horizon)

    return _iterate(init, config, make_rng(config.seed), draw, refit)
