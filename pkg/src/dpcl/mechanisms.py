"""Calibrated Gaussian and Laplace noise primitives shared by all DP releases.

The Gaussian mechanism is calibrated through the exact trade-off condition

    delta(eps; sigma, s) = Phi(s/(2 sigma) - eps sigma/s)
                           - e^eps * Phi(-s/(2 sigma) - eps sigma/s)

rather than the classical ``s * sqrt(2 ln(1.25/delta)) / eps`` rule, which
is kept only as an upper-bound cross-check in the tests.

Every noise draw is a pure function of a seed derived from a master seed and
a release index (see :func:`derive_seed`), so repeated runs are reproducible
without shared RNG state.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import CalibrationError

__all__ = [
    "PrivacyBudget",
    "GaussianParams",
    "LaplaceParams",
    "derive_seed",
    "seed_int",
    "gaussian_tradeoff_delta",
    "calibrate_gaussian",
    "classical_gaussian_sigma",
    "gaussian_noise",
    "laplace_tail",
    "laplace_noise",
]

# Absolute tolerance (in delta) of the calibration bisection.
CALIBRATION_TOL = 1e-12


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair.

    ``epsilon`` may be 0 (empty composition) or ``inf`` (a release with no
    noise); ``delta`` may reach 1.0 only as a saturated composition total.
    """

    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class GaussianParams:
    """Noise scale and L2 sensitivity of a Gaussian release."""

    sigma: float
    sensitivity: float

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.sensitivity < 0.0:
            raise ValueError(f"sensitivity must be >= 0, got {self.sensitivity}")


@dataclass(frozen=True)
class LaplaceParams:
    """Scale b of a zero-centred Laplace distribution (b = 1/eps for counts)."""

    scale: float

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale}")


def derive_seed(
    master: int | np.random.SeedSequence, *parts: int | str
) -> np.random.SeedSequence:
    """Derive an independent seed from a master seed and a release index.

    String parts are hashed so call sites can use readable labels
    (``derive_seed(seed, "noise", task, class_id)``). Derived seeds chain:
    the master may itself be a derived seed.
    """
    key = []
    for p in parts:
        if isinstance(p, str):
            digest = hashlib.blake2b(p.encode("utf-8"), digest_size=4).digest()
            key.append(int.from_bytes(digest, "little"))
        else:
            key.append(int(p) & 0xFFFFFFFF)
    if isinstance(master, np.random.SeedSequence):
        entropy = master.entropy
        base_key = tuple(master.spawn_key)
    else:
        entropy = int(master) & (2**128 - 1)
        base_key = ()
    return np.random.SeedSequence(entropy=entropy, spawn_key=base_key + tuple(key))


def seed_int(master: int, *parts: int | str) -> int:
    """64-bit integer form of :func:`derive_seed`, for APIs taking plain seeds."""
    return int(derive_seed(master, *parts).generate_state(1, np.uint64)[0])


def gaussian_tradeoff_delta(epsilon: float, sigma: float, sensitivity: float = 1.0) -> float:
    """Exact delta of the Gaussian mechanism at a given epsilon and scale.

    Returns the smallest delta for which N(0, sigma^2 I) noise on an
    L2-sensitivity-``sensitivity`` release is (epsilon, delta)-DP.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if sensitivity == 0.0 or math.isinf(epsilon):
        return 0.0
    if sigma == 0.0:
        return 1.0
    r = sigma / sensitivity
    a = 1.0 / (2.0 * r) - epsilon * r
    b = -1.0 / (2.0 * r) - epsilon * r
    # e^eps * Phi(b) in log space to survive large eps
    second = math.exp(epsilon + log_ndtr(b))
    return float(ndtr(a) - second)


def calibrate_gaussian(budget: PrivacyBudget, sensitivity: float) -> GaussianParams:
    """Minimal sigma meeting ``budget`` at the given L2 sensitivity.

    Solves the trade-off condition by bisection to within
    ``CALIBRATION_TOL`` (absolute, in delta). The solution scales linearly
    in the sensitivity, so the root find runs at unit sensitivity.
    """
    if sensitivity < 0:
        raise ValueError("sensitivity must be >= 0")
    if budget.delta <= 0.0:
        raise CalibrationError("the Gaussian mechanism cannot satisfy delta = 0 (pure DP)")
    if budget.epsilon <= 0.0 or not math.isfinite(budget.epsilon):
        if math.isinf(budget.epsilon):
            return GaussianParams(sigma=0.0, sensitivity=sensitivity)
        raise CalibrationError("calibration requires epsilon > 0")
    if sensitivity == 0.0:
        return GaussianParams(sigma=0.0, sensitivity=0.0)

    eps, target = budget.epsilon, budget.delta
    lo, hi = 1e-12, 1.0
    while gaussian_tradeoff_delta(eps, hi) > target:
        hi *= 2.0
        if hi > 1e12:
            raise CalibrationError("failed to bracket sigma during calibration")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        d = gaussian_tradeoff_delta(eps, mid)
        if abs(d - target) <= CALIBRATION_TOL:
            lo = hi = mid
            break
        if d > target:
            lo = mid
        else:
            hi = mid
    sigma_unit = 0.5 * (lo + hi)
    return GaussianParams(sigma=sensitivity * sigma_unit, sensitivity=sensitivity)


def classical_gaussian_sigma(budget: PrivacyBudget, sensitivity: float) -> float:
    """Classical sqrt(2 ln(1.25/delta))/eps bound, for cross-checks only."""
    if budget.delta <= 0 or budget.epsilon <= 0:
        raise CalibrationError("classical bound needs epsilon > 0 and delta > 0")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon


def gaussian_noise(dim: int, params: GaussianParams, seed: int | np.random.SeedSequence) -> np.ndarray:
    """``dim`` i.i.d. N(0, sigma^2) samples, deterministic per seed."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if params.sigma == 0.0:
        return np.zeros(dim)
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, params.sigma, size=dim)


def laplace_tail(x: float, params: LaplaceParams) -> float:
    """Pr[Lap(0, b) <= x], evaluated in closed form."""
    b = params.scale
    if x < 0:
        return 0.5 * math.exp(x / b)
    return 1.0 - 0.5 * math.exp(-x / b)


def laplace_noise(n: int, params: LaplaceParams, seed: int | np.random.SeedSequence) -> np.ndarray:
    """``n`` i.i.d. Lap(0, b) samples, deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.laplace(0.0, params.scale, size=n)
