"""Discrete sampling-law families used by the CE engine.

Three families are supported:

* ``CategoricalParams``: a law ``h(d)`` over a finite decision set.
* ``ConditionalCategoricalParams``: one categorical row ``h(.|x)`` per condition.
* ``GeometricStoppingParams``: the continue/end sequence law, where a sequence
  of length ``t`` has probability ``lam**(t-1) * (1-lam)``. With a horizon the
  law is conditioned on ``t <= horizon``.

Outcomes are plain integers: a decision index for the categorical family, a
sequence length for the geometric family, and an ``(x, d)`` pair for the
conditional family. All parameter objects are immutable; updates return new
objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from crossent.errors import ContractError, DomainError, NonTerminationError, UpdateError

NORMALIZATION_TOL = 1e-9
DEFAULT_LENGTH_CAP = 10**7


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ContractError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_simplex(probs: np.ndarray, what: str) -> None:
    if probs.shape[-1] < 1:
        raise ContractError(f"{what}: empty support")
    # NaN fails the min test and inf fails the sum test
    if not probs.min() >= 0:
        raise ContractError(f"{what}: entries must be finite and nonnegative")
    sums = probs.sum(axis=-1)
    if not np.abs(sums - 1.0).max() <= NORMALIZATION_TOL:
        raise ContractError(f"{what}: entries must sum to 1 (got {sums})")


@dataclass(frozen=True, eq=False)
class CategoricalParams:
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen_array(self.probs, 1)
        _check_simplex(probs, "CategoricalParams")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, n: int) -> "CategoricalParams":
        return cls(np.full(n, 1.0 / n))

    @property
    def n_outcomes(self) -> int:
        return self.probs.shape[0]

    def vector(self) -> np.ndarray:
        return self.probs


@dataclass(frozen=True, eq=False)
class ConditionalCategoricalParams:
    """Row ``x`` of ``table`` is the categorical law of ``d`` given ``x``."""

    table: np.ndarray

    def __post_init__(self):
        table = _frozen_array(self.table, 2)
        _check_simplex(table, "ConditionalCategoricalParams")
        object.__setattr__(self, "table", table)

    @classmethod
    def uniform(cls, n_conditions: int, n_outcomes: int) -> "ConditionalCategoricalParams":
        return cls(np.full((n_conditions, n_outcomes), 1.0 / n_outcomes))

    @property
    def n_conditions(self) -> int:
        return self.table.shape[0]

    @property
    def n_outcomes(self) -> int:
        return self.table.shape[1]

    def row(self, x: int) -> CategoricalParams:
        return CategoricalParams(self.table[x])

    def vector(self) -> np.ndarray:
        return self.table.ravel()


@dataclass(frozen=True)
class GeometricStoppingParams:
    """Continuation probability ``lam``; ``horizon`` set means conditioned on ``t <= horizon``."""

    lam: float
    horizon: int | None = None

    def __post_init__(self):
        lam = float(self.lam)
        if not 0.0 <= lam <= 1.0:
            raise ContractError(f"lam must lie in [0, 1], got {lam}")
        object.__setattr__(self, "lam", lam)
        if self.horizon is not None:
            if int(self.horizon) != self.horizon or self.horizon < 1:
                raise ContractError(f"horizon must be an integer >= 1, got {self.horizon}")
            object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def truncated(self) -> bool:
        return self.horizon is not None

    def vector(self) -> np.ndarray:
        return np.array([self.lam])


FamilyParams = Union[CategoricalParams, ConditionalCategoricalParams, GeometricStoppingParams]


@dataclass(frozen=True, eq=False)
class WeightedSamples:
    """Sampled outcomes with nonnegative update weights.

    ``outcomes`` has shape ``(n,)`` for categorical and geometric samples and
    ``(n, 2)`` holding ``(x, d)`` rows for conditional samples.
    """

    outcomes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        outcomes = np.asarray(self.outcomes, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1 or outcomes.shape[0] != weights.shape[0]:
            raise ContractError("outcomes and weights must have the same length")
        if weights.size and not (weights.min() >= 0 and np.isfinite(weights.sum())):
            raise ContractError("weights must be finite and nonnegative")
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def unweighted(cls, outcomes) -> "WeightedSamples":
        outcomes = np.asarray(outcomes, dtype=np.int64)
        return cls(outcomes, np.ones(outcomes.shape[0]))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


# --------------------------------------------------------------------------
# sampling


def _draw_categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    # Inverse CDF; side="right" never lands on a zero-probability entry.
    cum = np.cumsum(probs)
    idx = np.searchsorted(cum, u * cum[-1], side="right")
    return np.minimum(idx, probs.shape[0] - 1)


def truncated_geometric_probs(lam: float, horizon: int) -> np.ndarray:
    """Probabilities of lengths ``1..horizon`` under the conditioned law."""
    powers = lam ** np.arange(horizon, dtype=float)
    if lam == 0.0:
        powers[0] = 1.0
    return powers / powers.sum()


def sample_batch(params: FamilyParams, rng: np.random.Generator, n: int, conditions=None,
                 length_cap: int = DEFAULT_LENGTH_CAP) -> np.ndarray:
    """Draw ``n`` outcomes.

    For the conditional family ``conditions`` (length ``n``) gives the ``x``
    of each draw and the returned array holds the sampled ``d`` values.
    """
    if isinstance(params, CategoricalParams):
        return _draw_categorical(params.probs, rng.random(n))
    if isinstance(params, ConditionalCategoricalParams):
        if conditions is None:
            raise ContractError("conditional sampling needs the conditions x")
        conditions = np.asarray(conditions, dtype=np.int64)
        cum = np.cumsum(params.table, axis=1)[conditions]
        u = rng.random(n) * cum[:, -1]
        idx = (cum <= u[:, None]).sum(axis=1)
        return np.minimum(idx, params.n_outcomes - 1)
    if isinstance(params, GeometricStoppingParams):
        if params.truncated:
            probs = truncated_geometric_probs(params.lam, params.horizon)
            return _draw_categorical(probs, rng.random(n)) + 1
        if params.lam == 0.0:
            return np.ones(n, dtype=np.int64)
        if params.lam == 1.0:
            raise NonTerminationError("lam = 1 without a horizon never draws 'end'")
        lengths = rng.geometric(1.0 - params.lam, size=n)
        if np.any(lengths > length_cap):
            raise NonTerminationError(f"sequence exceeded the length cap {length_cap}")
        return lengths.astype(np.int64)
    raise ContractError(f"unknown family {type(params).__name__}")


def sample(params: FamilyParams, rng: np.random.Generator, condition: int | None = None,
           length_cap: int = DEFAULT_LENGTH_CAP) -> int:
    """Draw a single outcome (see ``sample_batch``)."""
    conditions = None if condition is None else [condition]
    return int(sample_batch(params, rng, 1, conditions, length_cap)[0])


# --------------------------------------------------------------------------
# densities


def _geometric_log_prob(lam: float, t: int, horizon: int | None) -> float:
    if t < 1:
        raise DomainError(f"sequence length must be >= 1, got {t}")
    if horizon is not None and t > horizon:
        raise DomainError(f"length {t} exceeds the horizon {horizon}")
    # (t-1)*log(lam) with the convention 0*log(0) = 0
    if t == 1:
        head = 0.0
    elif lam == 0.0:
        return -math.inf
    else:
        head = (t - 1) * math.log(lam)
    if horizon is None:
        return head + math.log1p(-lam) if lam < 1.0 else -math.inf
    # divide by sum_{k<T} lam^k, which equals (1 - lam^T)/(1 - lam) and is T at lam = 1
    return head - math.log(math.fsum(lam**k for k in range(horizon)))


def log_prob(params: FamilyParams, outcome) -> float:
    """Exact log-density; zero-probability outcomes give ``-inf``."""
    if isinstance(params, CategoricalParams):
        d = int(outcome)
        if not 0 <= d < params.n_outcomes:
            raise DomainError(f"decision {d} outside 0..{params.n_outcomes - 1}")
        p = params.probs[d]
        return math.log(p) if p > 0 else -math.inf
    if isinstance(params, ConditionalCategoricalParams):
        x, d = (int(v) for v in outcome)
        if not 0 <= x < params.n_conditions:
            raise DomainError(f"condition {x} outside 0..{params.n_conditions - 1}")
        return log_prob(params.row(x), d)
    if isinstance(params, GeometricStoppingParams):
        return _geometric_log_prob(params.lam, int(outcome), params.horizon)
    raise ContractError(f"unknown family {type(params).__name__}")


def weighted_log_likelihood(params: FamilyParams, samples: WeightedSamples) -> float:
    total = 0.0
    for outcome, w in zip(samples.outcomes, samples.weights):
        if w > 0:
            total += w * log_prob(params, outcome)
    return total


# --------------------------------------------------------------------------
# updates


def _require_mass(samples: WeightedSamples) -> float:
    total = samples.total_weight
    if not total > 0:
        raise UpdateError("all weights are zero")
    return total


def weighted_update(like: FamilyParams, samples: WeightedSamples) -> FamilyParams:
    """Weighted maximum-likelihood refit within the family of ``like``.

    ``like`` supplies the family and support size. For the conditional family,
    rows whose conditions receive no weight are copied from ``like`` unchanged.
    The geometric update always returns the untruncated closed form
    ``lam = 1 - sum(w) / sum(w * t)``; use ``truncated_update`` to refit the
    conditioned law.
    """
    total = _require_mass(samples)
    if isinstance(like, CategoricalParams):
        n = like.n_outcomes
        if samples.outcomes.size and (samples.outcomes.min() < 0 or samples.outcomes.max() >= n):
            raise DomainError("outcome outside the decision set")
        mass = np.bincount(samples.outcomes, weights=samples.weights, minlength=n)
        return CategoricalParams(mass / total)
    if isinstance(like, ConditionalCategoricalParams):
        nx, nd = like.table.shape
        xs, ds = samples.outcomes[:, 0], samples.outcomes[:, 1]
        mass = np.bincount(xs * nd + ds, weights=samples.weights, minlength=nx * nd).reshape(nx, nd)
        row_mass = mass.sum(axis=1)
        table = like.table.copy()
        hit = row_mass > 0
        table[hit] = mass[hit] / row_mass[hit, None]
        return ConditionalCategoricalParams(table)
    if isinstance(like, GeometricStoppingParams):
        if np.any(samples.outcomes < 1):
            raise DomainError("sequence lengths must be >= 1")
        support = samples.outcomes[samples.weights > 0]
        tbar = float(np.dot(samples.weights, samples.outcomes)) / total
        # clamp to the sample range so rounding cannot push lam above 1 - 1/max(t)
        tbar = min(max(tbar, float(support.min())), float(support.max()))
        return GeometricStoppingParams(1.0 - 1.0 / tbar)
    raise ContractError(f"unknown family {type(like).__name__}")


def truncated_log_objective(lam: float, mean_length: float, horizon: int) -> float:
    """``log(lam**(mean-1) * (1-lam) / (1-lam**T))`` in a form finite at ``lam = 1``."""
    if lam == 0.0:
        return 0.0 if mean_length == 1.0 else -math.inf
    denom = math.fsum(lam**k for k in range(horizon))
    return (mean_length - 1.0) * math.log(lam) - math.log(denom)


def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def truncated_update(samples: WeightedSamples, horizon: int, grid_points: int = 1000,
                     tol: float = 1e-9) -> GeometricStoppingParams:
    """Refit the conditioned law ``P(t | t <= horizon)`` to weighted lengths.

    Maximizes ``lam**(tbar-1) * (1-lam) / (1-lam**T)`` over ``[0, 1]`` with a
    coarse grid followed by golden-section refinement. ``tbar >= T`` returns 1.
    """
    total = _require_mass(samples)
    if np.any(samples.outcomes < 1):
        raise DomainError("sequence lengths must be >= 1")
    if np.any(samples.outcomes[samples.weights > 0] > horizon):
        raise DomainError(f"sample length exceeds the horizon {horizon}")
    tbar = float(np.dot(samples.weights, samples.outcomes)) / total
    if tbar >= horizon:
        return GeometricStoppingParams(1.0, horizon)
    if tbar <= 1.0:
        return GeometricStoppingParams(0.0, horizon)

    def objective(lam: float) -> float:
        return truncated_log_objective(lam, tbar, horizon)

    grid = np.linspace(0.0, 1.0, grid_points + 1)
    values = np.array([objective(g) for g in grid])
    i = int(np.argmax(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_points)]
    lam = _golden_max(objective, lo, hi, tol)
    best = max((lam, grid[i]), key=objective)
    return GeometricStoppingParams(float(best), horizon)


def mix(old: FamilyParams, new: FamilyParams, alpha: float) -> FamilyParams:
    """Convex smoothing ``alpha * old + (1 - alpha) * new`` of the parameters."""
    if not 0.0 <= alpha < 1.0:
        raise ContractError(f"alpha must lie in [0, 1), got {alpha}")
    if type(old) is not type(new):
        raise ContractError("cannot mix parameters of different families")
    if alpha == 0.0:
        return new
    if isinstance(old, CategoricalParams):
        if old.probs.shape != new.probs.shape:
            raise ContractError("shape mismatch")
        return CategoricalParams(alpha * old.probs + (1.0 - alpha) * new.probs)
    if isinstance(old, ConditionalCategoricalParams):
        if old.table.shape != new.table.shape:
            raise ContractError("shape mismatch")
        return ConditionalCategoricalParams(alpha * old.table + (1.0 - alpha) * new.table)
    if old.horizon != new.horizon:
        raise ContractError("horizon mismatch")
    return GeometricStoppingParams(alpha * old.lam + (1.0 - alpha) * new.lam, old.horizon)


def apply_floor(params: FamilyParams, floor: float | None) -> FamilyParams:
    """Clamp categorical entries to at least ``floor`` and renormalize."""
    if not floor:
        return params
    if isinstance(params, CategoricalParams):
        probs = np.maximum(params.probs, floor)
        return CategoricalParams(probs / probs.sum())
    if isinstance(params, ConditionalCategoricalParams):
        table = np.maximum(params.table, floor)
        return ConditionalCategoricalParams(table / table.sum(axis=1, keepdims=True))
    return params
