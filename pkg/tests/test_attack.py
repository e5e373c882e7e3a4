"""Adjacency game over the released label set."""

from __future__ import annotations

import math

import numpy as np
import pytest

from dpcl.attack import GameConfig, GameResult, run_game, wilson_interval
from dpcl.datasets import synth_mixture
from dpcl.errors import ConfigurationError
from dpcl.label_space import LabelPolicy
from dpcl.mechanisms import LaplaceParams, laplace_tail


def _game(policy, trials=200, seed=0):
    base, universe = synth_mixture(2, 5, 4, 8.0, seed=seed)
    challenge = np.array([0.5, 0.5, 0.5, 0.5], dtype=np.float32)
    return GameConfig(
        base_data=base,
        challenge_vector=challenge,
        challenge_label=universe.size,
        policy=policy,
        trials=trials,
        seed=seed,
    )


class TestDeterministicPolicies:
    def test_data_policy_advantage_is_exactly_one(self):
        result = run_game(_game(LabelPolicy.from_data()))
        assert result.advantage == 1.0
        assert result.guess_counts == (0, result.world_trials[1])

    def test_prior_policy_advantage_is_exactly_zero(self):
        prior = LabelPolicy.from_prior(range(3))  # contains challenge label 2
        result = run_game(_game(prior))
        assert result.advantage == 0.0
        # the constant release contains the label in both worlds
        assert result.guess_counts == result.world_trials

    def test_counts_partition_the_trials(self):
        result = run_game(_game(LabelPolicy.from_data(), trials=101))
        assert sum(result.world_trials) == 101
        assert result.world_trials == (51, 50)  # alternation starts in world 0


class TestLearnedPolicy:
    def test_release_frequency_matches_laplace_law(self):
        eps, tau, trials = 1.0, 2.0, 20_000
        policy = LabelPolicy.learned(tau=tau, release_epsilon=eps)
        result = run_game(_game(policy, trials=trials, seed=3))
        p = 1.0 - laplace_tail(tau - 1.0, LaplaceParams(1.0 / eps))
        n1 = result.world_trials[1]
        se = math.sqrt(p * (1 - p) / n1)
        assert abs(result.release_rate_world1 - p) <= 3 * se
        # a singleton novel label is never released from the world-0 data
        assert result.guess_counts[0] == 0
        assert result.advantage == pytest.approx(result.release_rate_world1)

    def test_advantage_monotone_in_threshold(self):
        rates = []
        for tau in (0.0, 1.0, 2.0, 4.0):
            policy = LabelPolicy.learned(tau=tau, release_epsilon=1.0)
            rates.append(run_game(_game(policy, trials=10_000, seed=1)).advantage)
        assert all(a >= b - 0.02 for a, b in zip(rates, rates[1:]))

    def test_very_low_threshold_releases_always(self):
        policy = LabelPolicy.learned(tau=-1e9, release_epsilon=1.0)
        result = run_game(_game(policy, trials=500))
        assert result.advantage == 1.0


class TestValidation:
    def test_challenge_label_must_be_novel(self):
        base, universe = synth_mixture(2, 5, 4, 8.0, seed=0)
        with pytest.raises(ConfigurationError, match="already occurs"):
            GameConfig(
                base_data=base,
                challenge_vector=np.ones(4, dtype=np.float32),
                challenge_label=0,
                policy=LabelPolicy.from_data(),
                trials=10,
            )

    def test_wilson_interval_extremes(self):
        lo, hi = wilson_interval(500, 500)
        assert hi == 1.0
        assert lo == pytest.approx(0.9924, abs=1e-3)
        lo0, hi0 = wilson_interval(0, 500)
        assert lo0 == pytest.approx(0.0, abs=1e-12)
        assert hi0 == pytest.approx(1 - lo, abs=1e-12)

    def test_result_interval_brackets_advantage(self):
        result = run_game(_game(LabelPolicy.learned(tau=1.5, release_epsilon=1.0), trials=4000))
        assert result.ci_low <= result.advantage <= result.ci_high
