"""Stochastic and deterministic test problems.

A ``Problem`` is a finite reward table ``V[d, x]`` with a law ``p`` over the
system variable ``x``. The expected gain of a decision ``d`` is
``sum_x p[x] * V[d, x]``. Deterministic problems have a single system state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crossent.errors import ContractError, DomainError

PROBLEM_FORMAT_HEADER = "# crossent problem v1"


@dataclass(frozen=True, eq=False)
class Problem:
    """Reward table ``rewards[d, x]`` and system law ``system_law[x]``.

    ``conditional`` marks problems whose decision is a map ``x -> d`` (the
    sampling law is then ``h(d | x)``).
    """

    rewards: np.ndarray
    system_law: np.ndarray
    conditional: bool = False
    name: str = "custom"
    seed: int | None = None

    def __post_init__(self):
        rewards = np.array(self.rewards, dtype=float)
        law = np.array(self.system_law, dtype=float)
        if rewards.ndim != 2 or law.ndim != 1 or rewards.shape[1] != law.shape[0]:
            raise ContractError(f"rewards {rewards.shape} and law {law.shape} disagree")
        if not np.all(np.isfinite(rewards)):
            raise ContractError("rewards must be finite")
        if np.any(law < 0) or abs(law.sum() - 1.0) > 1e-9:
            raise ContractError("system law must be a probability vector")
        rewards.setflags(write=False)
        law.setflags(write=False)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "system_law", law)

    @property
    def n_decisions(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def deterministic(self) -> bool:
        return self.n_states == 1

    def reward(self, d: int, x: int = 0) -> float:
        return float(self.rewards[d, x])

    def decision_gains(self) -> np.ndarray:
        """Expected gain of each pure decision, ``V @ p``."""
        return self.rewards @ self.system_law

    def reward_bounds(self) -> tuple[float, float]:
        return float(self.rewards.min()), float(self.rewards.max())

    def to_text(self) -> str:
        """Self-describing text serialization; floats are written exactly (repr)."""
        lines = [
            PROBLEM_FORMAT_HEADER,
            f"name {self.name}",
            f"n_decisions {self.n_decisions}",
            f"n_states {self.n_states}",
            f"conditional {str(self.conditional).lower()}",
            f"seed {'none' if self.seed is None else self.seed}",
            "p " + " ".join(repr(float(v)) for v in self.system_law),
            "V",
        ]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.rewards]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Problem":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != PROBLEM_FORMAT_HEADER:
            raise ContractError("not a crossent problem file")
        header: dict[str, str] = {}
        i = 1
        while i < len(lines) and lines[i] != "V":
            key, _, value = lines[i].partition(" ")
            header[key] = value
            i += 1
        try:
            nd, nx = int(header["n_decisions"]), int(header["n_states"])
            law = [float(v) for v in header["p"].split()]
            rows = [[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + nd]]
        except (KeyError, ValueError) as exc:
            raise ContractError(f"malformed problem file: {exc}") from exc
        if len(rows) != nd or any(len(r) != nx for r in rows):
            raise ContractError("V block does not match the declared dimensions")
        seed = header.get("seed", "none")
        return cls(
            rewards=rows,
            system_law=law,
            conditional=header.get("conditional", "false") == "true",
            name=header.get("name", "custom"),
            seed=None if seed == "none" else int(seed),
        )


@dataclass(frozen=True)
class SequenceProblem:
    """Continue/end problem: a sequence of length ``t <= horizon`` earns ``t``."""

    horizon: int

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ContractError(f"horizon must be an integer >= 1, got {self.horizon}")

    def is_valid(self, t: int) -> bool:
        return 1 <= t <= self.horizon

    def reward(self, t: int) -> int:
        if not self.is_valid(t):
            raise DomainError(f"length {t} outside 1..{self.horizon}")
        return int(t)

    @property
    def optimal_reward(self) -> int:
        return self.horizon


def example1() -> Problem:
    """Conditional problem with ``V(d, x) = 2x + d`` and ``p = (1/2, 1/2)``."""
    d = np.arange(2)[:, None]
    x = np.arange(2)[None, :]
    return Problem(2.0 * x + d, [0.5, 0.5], conditional=True, name="example1")


def example2() -> Problem:
    """``V(0,0) = 2``, ``V(0,1) = -2``, ``V(1,.) = 1``; ``p = (1/2, 1/2)``."""
    return Problem([[2.0, -2.0], [1.0, 1.0]], [0.5, 0.5], name="example2")


def sequence_problem(horizon: int) -> SequenceProblem:
    return SequenceProblem(horizon)


def deterministic_problem(values) -> Problem:
    """Single-state problem with reward ``values[d]``."""
    return Problem(np.asarray(values, dtype=float)[:, None], [1.0], name="deterministic")


SIMPLEX_MODES = ("uniform", "normalized")


def random_simplex(n: int, rng: np.random.Generator, mode: str = "uniform") -> np.ndarray:
    """Random probability vector of length ``n``.

    ``uniform`` is the uniform law on the simplex (spacings of sorted uniforms);
    ``normalized`` divides i.i.d. uniform components by their sum.
    """
    if mode == "uniform":
        cuts = np.sort(rng.random(n - 1))
        return np.diff(np.concatenate(([0.0], cuts, [1.0])))
    if mode == "normalized":
        u = rng.random(n)
        return u / u.sum()
    raise ContractError(f"unknown simplex mode {mode!r}")


def random_problem(n_states: int, rng: np.random.Generator, simplex: str = "uniform",
                   seed: int | None = None) -> Problem:
    """``n_states`` decisions and system states, ``V`` i.i.d. uniform on ``(0, 1]``."""
    if n_states < 2:
        raise ContractError("random problems need n_states >= 2")
    rewards = 1.0 - rng.random((n_states, n_states))
    law = random_simplex(n_states, rng, simplex)
    return Problem(rewards, law, name="random", seed=seed)
