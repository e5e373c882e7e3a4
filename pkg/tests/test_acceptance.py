"""Acceptance suite: one test per headline criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion. Each test also enforces its runtime budget.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from dpcl.accountant import GroupDPQuery, PrivacyLedger, ReleaseRecord, group_dp_delta, total
from dpcl.attack import GameConfig, run_game
from dpcl.cosine import ClassSumTable, update_sums
from dpcl.datasets import BlurryConfig, make_stream, synth_mixture
from dpcl.dpsgd import DpSgdConfig, softmax_xent_grads, train_head
from dpcl.errors import ScopeViolationError
from dpcl.harness import ExperimentConfig, run_experiment
from dpcl.kernels import clipped_grad_sums
from dpcl.label_space import LabelPolicy, ReleasedLabelSpace, class_loss_curve
from dpcl.mechanisms import (
    GaussianParams,
    LaplaceParams,
    PrivacyBudget,
    calibrate_gaussian,
    classical_gaussian_sigma,
    gaussian_tradeoff_delta,
    laplace_tail,
)


def _report(name: str, started: float, limit: float) -> None:
    elapsed = time.perf_counter() - started
    print(f"[PASS] {name}: {elapsed:.2f}s (budget {limit:.0f}s)")
    assert elapsed < limit, f"{name} exceeded its runtime budget"


def test_criterion_1_class_drop_curve_reproduction():
    started = time.perf_counter()
    eps, delta = 1.0, 1e-7
    rows = {k: bound for _, k, bound in class_loss_curve([eps], delta, 14)}
    assert rows[12] >= 0.99
    assert rows[13] < 0.99
    # brute-force summation oracle at 1e-12 relative error
    oracle_12 = delta * math.fsum(math.exp(i * eps) for i in range(12))
    got_12 = group_dp_delta(GroupDPQuery(eps, delta, 12))
    assert abs(got_12 - oracle_12) / oracle_12 <= 1e-12
    _report("criterion-1 class-drop curve (k=12/13 bracket 99%)", started, 1.0)


def test_criterion_2_attack_game_dichotomy():
    started = time.perf_counter()
    base, universe = synth_mixture(2, 5, 8, 8.0, seed=0)
    challenge = np.full(8, 0.35, dtype=np.float32)
    novel = universe.size

    def game(policy, trials, seed=0):
        return run_game(
            GameConfig(
                base_data=base,
                challenge_vector=challenge,
                challenge_label=novel,
                policy=policy,
                trials=trials,
                seed=seed,
            )
        )

    assert game(LabelPolicy.from_data(), 1000).advantage == 1.0
    assert game(LabelPolicy.from_prior(range(novel + 1)), 1000).advantage == 0.0

    eps, tau, trials = 1.0, 2.0, 100_000
    result = game(LabelPolicy.learned(tau=tau, release_epsilon=eps), trials, seed=7)
    p = 1.0 - laplace_tail(tau - 1.0, LaplaceParams(1.0 / eps))
    n1 = result.world_trials[1]
    se = math.sqrt(p * (1 - p) / n1)
    assert abs(result.release_rate_world1 - p) <= 3 * se
    _report("criterion-2 attack game (1.0 / 0.0 exact; Laplace law within 3 SE)", started, 30.0)


def test_criterion_3_gaussian_calibration_roundtrip():
    started = time.perf_counter()
    for eps in (0.5, 1.0, 8.0):
        for delta in (1e-5, 1e-7):
            budget = PrivacyBudget(eps, delta)
            sigma = calibrate_gaussian(budget, 1.0).sigma
            assert abs(gaussian_tradeoff_delta(eps, sigma, 1.0) - delta) <= 1e-9
            assert sigma <= classical_gaussian_sigma(budget, 1.0)
    _report("criterion-3 Gaussian calibration round-trip (6 cells)", started, 1.0)


def test_criterion_4_composition_arithmetic():
    started = time.perf_counter()
    budget = PrivacyBudget(1.0, 1e-5)

    def ledger(mode, scopes):
        led = PrivacyLedger(mode=mode)
        for t, scope in enumerate(scopes, start=1):
            led = PrivacyLedger(mode=mode, records=led.records + (ReleaseRecord(t, budget, scope),))
        return led

    distinct = [f"task-{t}" for t in range(10)]
    assert total(ledger("parallel", distinct)) == PrivacyBudget(1.0, 1e-5)
    assert total(ledger("sequential_basic", distinct)) == PrivacyBudget(10.0, 1e-4)
    assert total(ledger("parallel_multi_adjacent", distinct)) == PrivacyBudget(10.0, 1e-4)
    with pytest.raises(ScopeViolationError):
        total(ledger("parallel", ["same"] * 10))
    _report("criterion-4 composition arithmetic (parallel/seq/multi-adjacent)", started, 1.0)


def test_criterion_5_cosine_partition_invariance():
    started = time.perf_counter()
    data, universe = synth_mixture(10, 100, 16, 8.0, seed=11)  # 1000 samples
    assert len(data) == 1000
    policy = LabelPolicy.from_prior(range(universe.size))
    released = ReleasedLabelSpace(frozenset(range(universe.size)), "prior")
    noiseless = GaussianParams(0.0, 1.0)

    tables = {}
    for mode in ("disjoint", "iblurry", "siblurry"):
        blurry = BlurryConfig(disjoint_fraction=0.5, imbalance=4.0, seed=3)
        stream = make_stream(data, universe, 5, mode, policy, blurry)
        table = ClassSumTable.empty(16)
        for t, task in enumerate(stream.tasks, start=1):
            table = update_sums(table, task.data, released, noiseless, seed=t)
        tables[mode] = table

    for mode in ("iblurry", "siblurry"):
        for c in range(universe.size):
            diff = np.abs(tables[mode].sums[c] - tables["disjoint"].sums[c])
            assert diff.max() <= 1e-6
    _report("criterion-5 cosine partition invariance (disjoint/i-Blurry/Si-Blurry)", started, 10.0)


def test_criterion_6_dpsgd_correctness():
    started = time.perf_counter()
    # (a) instrumented clipping over a full run
    rng = np.random.default_rng(0)
    vectors = np.concatenate(
        [
            rng.normal(loc=(+2.0, 0.0), scale=0.3, size=(60, 2)),
            rng.normal(loc=(-2.0, 0.0), scale=0.3, size=(60, 2)),
        ]
    ).astype(np.float32)
    labels = np.array([0] * 60 + [1] * 60, dtype=np.int64)
    from dpcl.datasets import EmbeddingDataset

    data = EmbeddingDataset(2, vectors, labels)
    released = ReleasedLabelSpace(frozenset({0, 1}), "prior")
    clip = 1.0
    max_norms = []
    cfg = DpSgdConfig(
        clip_norm=clip,
        noise_multiplier=0.7,
        expected_batch=30,
        epochs=10,
        learning_rate=0.5,
        seed=1,
    )
    train_head(data, released, cfg, step_hook=lambda s: max_norms.append(s.max_clipped_norm))
    assert max_norms and max(max_norms) <= clip + 1e-9

    # (b) analytic softmax-CE gradient vs central finite differences
    n, k, classes = 5, 5, 3
    feats = rng.normal(size=(n, k))
    y = rng.integers(0, classes, size=n)
    w = rng.normal(size=(classes, k))
    b = rng.normal(size=classes)

    def loss_at(wm, bm):
        logits = feats @ wm.T + bm
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        return float(-np.mean(np.log(p[np.arange(n), y])))

    grad_logits, _ = softmax_xent_grads(feats, y, w, b)
    grad_w = grad_logits.T @ feats / n
    h = 1e-6
    for idx in [(0, 0), (1, 2), (2, 4), (0, 3)]:
        wp, wm_ = w.copy(), w.copy()
        wp[idx] += h
        wm_[idx] -= h
        fd = (loss_at(wp, b) - loss_at(wm_, b)) / (2 * h)
        assert abs(grad_w[idx] - fd) / max(abs(fd), 1e-12) <= 1e-4

    # (c) vanishing noise on separable data reaches 95% train accuracy
    low_noise = DpSgdConfig(
        clip_norm=1.0,
        noise_multiplier=1e-10,
        expected_batch=30,
        epochs=15,
        learning_rate=1.0,
        seed=2,
    )
    trained = train_head(data, released, low_noise)
    logits = data.vectors.astype(np.float64) @ trained.head.weights.T + trained.head.bias
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    assert acc >= 0.95
    _report("criterion-6 DP-SGD correctness (clipping, gradients, separable fit)", started, 60.0)


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    """Shared synthetic benchmark: 10 tasks x 5 classes/task, 5 repeats."""
    out = tmp_path_factory.mktemp("bench")
    base = dict(
        classes=50,
        per_class=40,
        dim=16,
        separation=8.0,
        num_tasks=10,
        repeats=5,
        master_seed=0,
        batch=32,
        epochs=8,
        learning_rate=0.5,
        delta=1e-5,
    )
    built = time.perf_counter()
    results = {}
    for method in ("cosine", "ensemble", "naive", "full"):
        cfg = ExperimentConfig(
            method=method,
            epsilons=(1.0, math.inf),
            output_dir=str(out / method),
            **base,
        )
        results[method] = run_experiment(cfg)
    return results, time.perf_counter() - built


def test_criterion_7_tradeoff_and_baseline_ordering(benchmark_runs):
    runs, build_seconds = benchmark_runs
    started = time.perf_counter() - build_seconds  # charge the benchmark itself
    med = {
        (method, eps): runs[method].median_final_accuracy(eps)
        for method in ("cosine", "ensemble", "naive", "full")
        for eps in (1.0, math.inf)
    }
    # baseline ordering at eps = 1
    assert med[("full", 1.0)] >= med[("ensemble", 1.0)] >= med[("naive", 1.0)]
    # privacy/utility direction: no noise never loses to eps = 1, any method
    for method in ("cosine", "ensemble", "naive", "full"):
        assert med[(method, math.inf)] >= med[(method, 1.0)]
    print(
        "           medians: "
        + ", ".join(f"{m}@{'inf' if math.isinf(e) else e}={v:.3f}" for (m, e), v in sorted(med.items()))
    )
    _report("criterion-7 ordering full >= ensemble >= naive; no-noise >= eps-1", started, 600.0)


def test_criterion_8_dummy_label_robustness(tmp_path):
    started = time.perf_counter()
    cfg = ExperimentConfig(
        classes=10,
        per_class=100,
        dim=16,
        separation=8.0,
        num_tasks=5,
        method="cosine",
        epsilons=(math.inf,),
        dummy_multipliers=(1, 10, 100, 1000),
        repeats=3,
        master_seed=2,
        output_dir=str(tmp_path / "dummy"),
    )
    result = run_experiment(cfg)
    baseline = result.median_final_accuracy(math.inf, 1)
    for multiplier in (10, 100, 1000):
        inflated = result.median_final_accuracy(math.inf, multiplier)
        assert baseline - inflated <= 0.02, f"dummy x{multiplier} lost too much accuracy"
    _report("criterion-8 dummy-label robustness (<= 2 points across the grid)", started, 300.0)
