"""Task-wise DP ledger, composition rules, and the DP-SGD privacy bound.

The ledger is a value type: appending returns a new ledger, so concurrent
readers never observe mutation. Three composition modes are supported:

* ``parallel`` - releases over pairwise-disjoint privacy units; the total
  is the componentwise maximum.
* ``sequential_basic`` - basic composition; the total is the componentwise
  sum.
* ``parallel_multi_adjacent`` - disjoint units but every task dataset may
  differ from its neighbour; the total is (n * max eps, n * max delta).

DP-SGD privacy is bounded through Renyi DP of the Poisson-subsampled
Gaussian mechanism composed over steps and converted at the target delta.
This is a sound upper bound, possibly looser than tighter numerical
accountants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import CalibrationError, ScopeViolationError
from .mechanisms import PrivacyBudget

__all__ = [
    "ReleaseRecord",
    "PrivacyLedger",
    "GroupDPQuery",
    "record_release",
    "total",
    "group_dp_delta",
    "dpsgd_epsilon",
    "calibrate_noise_multiplier",
    "ledger_to_json",
    "DEFAULT_RDP_ORDERS",
]

MODES = ("parallel", "sequential_basic", "parallel_multi_adjacent")

# Renyi orders used for the DP-SGD bound.
DEFAULT_RDP_ORDERS: tuple[float, ...] = tuple(np.arange(1.25, 255.0001, 0.25))


@dataclass(frozen=True)
class ReleaseRecord:
    """One DP release: task index, spent budget, and the population touched."""

    task_index: int
    budget: PrivacyBudget
    unit_scope: str

    def __post_init__(self):
        if self.task_index < 1:
            raise ValueError(f"task_index must be >= 1, got {self.task_index}")


@dataclass(frozen=True)
class PrivacyLedger:
    """Append-only record of DP releases under a fixed composition mode."""

    mode: str = "sequential_basic"
    records: tuple[ReleaseRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def record(self, rec: ReleaseRecord) -> "PrivacyLedger":
        return PrivacyLedger(mode=self.mode, records=self.records + (rec,))

    def total(self) -> PrivacyBudget:
        return total(self)


@dataclass(frozen=True)
class GroupDPQuery:
    """Group-DP degradation query: base (epsilon, delta) and group size k."""

    epsilon: float
    delta: float
    k: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def record_release(ledger: PrivacyLedger, rec: ReleaseRecord) -> PrivacyLedger:
    """Return a new ledger with ``rec`` appended; the input is unchanged."""
    return ledger.record(rec)


def total(ledger: PrivacyLedger) -> PrivacyBudget:
    """Composed (epsilon, delta) of all recorded releases.

    The empty composition is (0, 0). In parallel mode, colliding
    ``unit_scope`` values violate the disjointness precondition and raise
    :class:`ScopeViolationError`.
    """
    recs = ledger.records
    if not recs:
        return PrivacyBudget(0.0, 0.0)
    eps = [r.budget.epsilon for r in recs]
    dts = [r.budget.delta for r in recs]
    if ledger.mode == "parallel":
        scopes = [r.unit_scope for r in recs]
        if len(set(scopes)) != len(scopes):
            dup = sorted({s for s in scopes if scopes.count(s) > 1})
            raise ScopeViolationError(
                f"parallel composition requires pairwise-disjoint unit scopes; colliding: {dup}"
            )
        return PrivacyBudget(max(eps), max(dts))
    if ledger.mode == "sequential_basic":
        return PrivacyBudget(math.fsum(eps), min(1.0, math.fsum(dts)))
    n = len(recs)
    return PrivacyBudget(n * max(eps), min(1.0, n * max(dts)))


def ledger_to_json(ledger: PrivacyLedger) -> dict:
    """JSON-ready view: per-release rows plus the composed total."""
    tot = total(ledger)
    return {
        "mode": ledger.mode,
        "releases": [
            {
                "task": r.task_index,
                "epsilon": r.budget.epsilon,
                "delta": r.budget.delta,
                "scope": r.unit_scope,
            }
            for r in ledger.records
        ],
        "total": {"epsilon": tot.epsilon, "delta": tot.delta},
    }


def group_dp_delta(q: GroupDPQuery) -> float:
    """delta_k = sum_{i=0}^{k-1} e^(i eps) * delta, saturating at 1.

    Evaluated in log space so large k*eps does not overflow; for k = 1 this
    is exactly ``delta``.
    """
    if q.k == 1:
        return q.delta
    ke = q.k * q.epsilon
    # log((e^(k eps) - 1) / (e^eps - 1)) with both factors in log form
    log_num = ke + math.log1p(-math.exp(-ke))
    log_den = q.epsilon + math.log1p(-math.exp(-q.epsilon))
    log_dk = math.log(q.delta) + log_num - log_den
    if log_dk >= 0.0:
        return 1.0
    return math.exp(log_dk)


# ---------------------------------------------------------------------------
# Renyi DP of the Poisson-subsampled Gaussian mechanism.
#
# Per-step RDP at order a is log(A_a) / (a - 1) where A_a expands, after
# splitting the defining integral at z0 = sigma^2 log(1/q - 1) + 1/2, into
# two binomial series in the sampling rate with Gaussian-tail factors. The
# expansion holds for fractional and integer orders alike (for integer
# orders the high terms vanish through the binomial coefficient). Series
# terms are accumulated in log space, positive and negative parts
# separately, until a whole chunk falls below e^-30.
# ---------------------------------------------------------------------------

_SERIES_CUTOFF = -30.0
_SERIES_CHUNK = 128
_rdp_cache: dict[tuple[float, float, tuple[float, ...]], np.ndarray] = {}


def _logsumexp(arr: np.ndarray, axis: int) -> np.ndarray:
    return special.logsumexp(arr, axis=axis)


def _rdp_sgm_orders(q: float, sigma: float, orders: tuple[float, ...]) -> np.ndarray:
    """Per-step RDP of the sampled Gaussian mechanism at every order."""
    alphas = np.asarray(orders, dtype=np.float64)
    if q == 1.0:
        return alphas / (2.0 * sigma**2)
    key = (q, sigma, orders)
    cached = _rdp_cache.get(key)
    if cached is not None:
        return cached

    log_q = math.log(q)
    log_1mq = math.log1p(-q)
    z0 = sigma**2 * math.log(1.0 / q - 1.0) + 0.5
    a_col = alphas[:, None]
    pos_parts: list[np.ndarray] = []
    neg_parts: list[np.ndarray] = []
    start = 0
    while True:
        i = np.arange(start, start + _SERIES_CHUNK, dtype=np.float64)[None, :]
        j = a_col - i
        log_binom = (
            special.gammaln(a_col + 1.0) - special.gammaln(i + 1.0) - special.gammaln(j + 1.0)
        )
        sign = special.gammasgn(a_col + 1.0) * special.gammasgn(j + 1.0)
        log_t0 = log_binom + i * log_q + j * log_1mq
        log_t1 = log_binom + j * log_q + i * log_1mq
        # log(erfc(x)) = log 2 + log Phi(-x sqrt(2))
        log_e0 = math.log(0.5) + math.log(2.0) + special.log_ndtr(-(i - z0) / sigma)
        log_e1 = math.log(0.5) + math.log(2.0) + special.log_ndtr(-(z0 - j) / sigma)
        log_s0 = log_t0 + (i * i - i) / (2.0 * sigma**2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2.0 * sigma**2) + log_e1
        terms = np.concatenate([log_s0, log_s1], axis=1)
        signs = np.concatenate([sign, sign], axis=1)
        pos_parts.append(np.where(signs > 0, terms, -np.inf))
        neg_parts.append(np.where(signs < 0, terms, -np.inf))
        if np.max(terms) < _SERIES_CUTOFF:
            break
        start += _SERIES_CHUNK
        if start > 2_000_000:  # pragma: no cover - defensive
            raise RuntimeError("RDP series failed to converge")
    log_pos = _logsumexp(np.concatenate(pos_parts, axis=1), axis=1)
    log_neg = _logsumexp(np.concatenate(neg_parts, axis=1), axis=1)
    # A_a = exp(log_pos) - exp(log_neg) > 0
    with np.errstate(invalid="ignore"):
        log_a = log_pos + np.log1p(-np.exp(np.minimum(log_neg - log_pos, -1e-17)))
    rdp = log_a / (alphas - 1.0)
    _rdp_cache[key] = rdp
    return rdp


def dpsgd_epsilon(
    noise_multiplier: float,
    sample_rate: float,
    steps: int,
    delta: float,
    orders: tuple[float, ...] = DEFAULT_RDP_ORDERS,
) -> float:
    """Upper bound on epsilon for DP-SGD at the given delta.

    Composes per-step RDP of the Poisson-subsampled Gaussian mechanism over
    ``steps`` and converts with eps = min_a [steps * rdp(a) + log(1/delta)/(a-1)].
    """
    if noise_multiplier <= 0:
        raise ValueError("noise_multiplier must be > 0")
    if not 0.0 < sample_rate <= 1.0:
        raise ValueError("sample_rate must be in (0, 1]")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    if steps == 0:
        return 0.0
    alphas = np.asarray(orders, dtype=np.float64)
    rdp = _rdp_sgm_orders(sample_rate, noise_multiplier, tuple(orders))
    eps = steps * rdp + math.log(1.0 / delta) / (alphas - 1.0)
    return float(np.min(eps[np.isfinite(eps)]))


@lru_cache(maxsize=512)
def calibrate_noise_multiplier(
    target_epsilon: float,
    sample_rate: float,
    steps: int,
    delta: float,
    rel_tol: float = 1e-3,
) -> float:
    """Smallest noise multiplier whose DP-SGD bound meets ``target_epsilon``."""
    if not target_epsilon > 0:
        raise CalibrationError("target epsilon must be > 0")
    if steps == 0:
        raise CalibrationError("cannot calibrate noise for zero steps")
    lo, hi = 1e-3, 4.0
    while dpsgd_epsilon(hi, sample_rate, steps, delta) > target_epsilon:
        hi *= 2.0
        if hi > 1e6:
            raise CalibrationError("failed to bracket the noise multiplier")
    while dpsgd_epsilon(lo, sample_rate, steps, delta) < target_epsilon:
        lo /= 2.0
        if lo < 1e-9:
            break
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if dpsgd_epsilon(mid, sample_rate, steps, delta) > target_epsilon:
            lo = mid
        else:
            hi = mid
    return hi
