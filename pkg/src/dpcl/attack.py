"""Adjacency game: how much does the released label set alone distinguish
a dataset from its neighbour that adds one novel-label record?

Each trial builds either the base dataset (world 0) or the base plus the
challenge record (world 1), resolves the label space under the configured
policy, and the adversary guesses world 1 iff the challenge label was
released. The world bit alternates deterministically, so the two
deterministic policies produce exact advantages: 1 for the data policy
(the released sets are disjoint across worlds) and 0 for a prior that
contains the challenge label (the release is a constant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datasets import EmbeddingDataset
from .errors import ConfigurationError
from .label_space import LabelPolicy, resolve_label_space
from .mechanisms import derive_seed

__all__ = ["GameConfig", "GameResult", "run_game", "wilson_interval"]


@dataclass(frozen=True)
class GameConfig:
    """Adjacency game setup; the challenge label must be novel."""

    base_data: EmbeddingDataset
    challenge_vector: np.ndarray
    challenge_label: int
    policy: LabelPolicy
    trials: int
    seed: int = 0

    def __post_init__(self):
        if self.trials < 2:
            raise ConfigurationError("need at least 2 trials (one per world)")
        if self.challenge_label in set(map(int, self.base_data.present_labels())):
            raise ConfigurationError(
                f"challenge label {self.challenge_label} already occurs in the base data"
            )
        vec = np.asarray(self.challenge_vector, dtype=np.float32).reshape(-1)
        if vec.shape != (self.base_data.dim,):
            raise ConfigurationError("challenge vector dimension mismatch")
        object.__setattr__(self, "challenge_vector", vec)


@dataclass(frozen=True)
class GameResult:
    """Empirical distinguishing advantage with a conservative 95% interval."""

    advantage: float
    trials: int
    world_trials: tuple[int, int]
    guess_counts: tuple[int, int]  # trials guessed "world 1", per true world
    ci_low: float
    ci_high: float

    @property
    def release_rate_world1(self) -> float:
        """How often the challenge label was released when actually present."""
        return self.guess_counts[1] / self.world_trials[1]


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson 95% score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def run_game(cfg: GameConfig) -> GameResult:
    """Play the adjacency game and return the measured advantage."""
    base = cfg.base_data
    with_challenge = EmbeddingDataset(
        base.dim,
        np.concatenate([base.vectors, cfg.challenge_vector[None, :]]),
        np.concatenate([base.labels, np.array([cfg.challenge_label], dtype=np.int64)]),
    )
    guesses = [0, 0]
    totals = [0, 0]
    for trial in range(cfg.trials):
        world = trial % 2  # deterministic alternation keeps the game balanced
        data = with_challenge if world == 1 else base
        released = resolve_label_space(data, cfg.policy, derive_seed(cfg.seed, "game", trial))
        totals[world] += 1
        if cfg.challenge_label in released.labels:
            guesses[world] += 1
    p1 = guesses[1] / totals[1]
    p0 = guesses[0] / totals[0]
    lo1, hi1 = wilson_interval(guesses[1], totals[1])
    lo0, hi0 = wilson_interval(guesses[0], totals[0])
    return GameResult(
        advantage=abs(p1 - p0),
        trials=cfg.trials,
        world_trials=(totals[0], totals[1]),
        guess_counts=(guesses[0], guesses[1]),
        ci_low=max(0.0, lo1 - hi0),
        ci_high=min(1.0, hi1 - lo0),
    )
