"""Experiment driver: datasets -> policies -> classifiers -> accountant -> metrics.

A run executes one method (``cosine``, ``ensemble``, ``naive``, or ``full``)
over a task stream for every epsilon in the configured grid, repeating with
seeds ``master_seed + r`` and reporting min/median/max over repeats.
Evaluation queries are a held-out 20% of each task's records; the held-out
mask is a pure function of (repeat seed, source record index), so it does
not depend on how records were partitioned into tasks.

Outputs per run: ``results.csv`` (columns repeat, task, method, epsilon,
delta, acc, avg_acc, avg_forget), ``summary.json`` mirroring the metrics
reports, a ledger export, and plot-data series (accuracy vs epsilon,
accuracy vs dummy multiplier, and the class-drop lower-bound curve).

The ``data`` label policy is a non-private negative control: this driver
refuses to compose it into a ledger (use the attack game instead).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .accountant import (
    PrivacyLedger,
    ReleaseRecord,
    calibrate_noise_multiplier,
    ledger_to_json,
    record_release,
)
from .cosine import ClassSumTable, predict_cosine_batch, update_sums
from .datasets import (
    BlurryConfig,
    EmbeddingDataset,
    LabelUniverse,
    Task,
    TaskStream,
    load_embeddings,
    make_stream,
    synth_mixture,
)
from .dpsgd import (
    DpSgdConfig,
    Ensemble,
    LinearHead,
    TrainedHead,
    predict_ensemble_batch,
    train_full,
    train_head,
    train_naive,
)
from .errors import ConfigurationError, EmptyModelError, MetricError, ScopeViolationError
from .label_space import (
    LabelPolicy,
    ReleasedLabelSpace,
    class_loss_curve,
    learned_release_delta,
    prepare_task_data,
    remap_task,
    resolve_label_space,
)
from .mechanisms import GaussianParams, PrivacyBudget, calibrate_gaussian, seed_int

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "MetricsReport",
    "ExperimentResult",
    "average_accuracy",
    "average_forgetting",
    "eval_holdout_mask",
    "run_repeat",
    "run_experiment",
    "parse_config_text",
    "config_from_mapping",
    "CONFIG_KEYS",
]

METHODS = ("cosine", "ensemble", "naive", "full")
EVAL_FRACTION = 0.2
ALLOWED_DUMMY_MULTIPLIERS = (1, 10, 100, 1000)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def average_accuracy(acc_row: Sequence[float], t: int) -> float:
    """Mean accuracy over the first ``t`` tasks after learning task ``t``."""
    if t < 1:
        raise MetricError("average accuracy is undefined for t = 0")
    if len(acc_row) != t:
        raise MetricError(f"need {t} accuracies, got {len(acc_row)}")
    return float(sum(acc_row[:t]) / t)


def average_forgetting(acc_matrix: Sequence[Sequence[float]], t: int) -> float:
    """Mean drop from each earlier task's best accuracy to its accuracy at t.

    ``acc_matrix[k-1][i-1]`` is task i's accuracy after learning task k
    (defined for i <= k). Improvement yields negative forgetting.
    """
    if t < 2:
        raise MetricError("average forgetting is undefined for t < 2")
    drops = []
    for i in range(1, t):
        best = max(acc_matrix[k - 1][i - 1] for k in range(i, t))
        drops.append(best - acc_matrix[t - 1][i - 1])
    return float(sum(drops) / (t - 1))


def eval_holdout_mask(n_records: int, repeat_seed: int, fraction: float = EVAL_FRACTION) -> np.ndarray:
    """Boolean held-out mask over source record indices, fixed per seed."""
    u = np.random.default_rng(seed_int(repeat_seed, "eval-split")).random(n_records)
    return u < fraction


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: data source, stream shape, method, budgets, policy."""

    # data source: an EMB1 file, or the synthetic mixture
    emb_path: str | None = None
    classes: int = 10
    per_class: int = 100
    dim: int = 16
    separation: float = 8.0
    # stream
    num_tasks: int = 5
    stream_mode: str = "disjoint"
    disjoint_fraction: float = 0.5
    blurry_spread: int | None = None
    imbalance: float = 4.0
    # method and per-release budget
    method: str = "cosine"
    epsilons: tuple[float, ...] = (1.0,)
    delta: float = 1e-5
    # label policy
    label_kind: str = "prior"
    label_prior_path: str | None = None
    label_tau: float = 2.0
    label_release_epsilon: float = 1.0
    dummy_multipliers: tuple[int, ...] = (1,)
    # DP-SGD hyperparameters
    clip_norm: float = 1.0
    batch: int = 64
    epochs: int = 4
    learning_rate: float = 0.5
    aggregation: str = "argmax"
    random_init: bool = False
    # run control
    repeats: int = 1
    master_seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError("budget delta must be in (0, 1)")
        if not self.epsilons:
            raise ConfigurationError("need at least one epsilon")
        for e in self.epsilons:
            if not e > 0:
                raise ConfigurationError("every epsilon must be > 0 (use inf for no noise)")
        if self.label_kind == "data":
            raise ConfigurationError(
                "the data label policy is non-private and cannot be composed into a "
                "ledger; use the attack subcommand to study it"
            )
        if self.label_kind not in ("prior", "learned"):
            raise ConfigurationError(f"unknown label kind {self.label_kind!r}")
        for m in self.dummy_multipliers:
            if m not in ALLOWED_DUMMY_MULTIPLIERS:
                raise ConfigurationError(
                    f"dummy multiplier must be in {ALLOWED_DUMMY_MULTIPLIERS}, got {m}"
                )


CONFIG_KEYS: dict[str, tuple[str, str]] = {
    # key -> (ExperimentConfig field, type tag)
    "data.path": ("emb_path", "str"),
    "data.classes": ("classes", "int"),
    "data.per_class": ("per_class", "int"),
    "data.dim": ("dim", "int"),
    "data.separation": ("separation", "float"),
    "stream.tasks": ("num_tasks", "int"),
    "stream.mode": ("stream_mode", "str"),
    "stream.disjoint_fraction": ("disjoint_fraction", "float"),
    "stream.blurry_spread": ("blurry_spread", "optint"),
    "stream.imbalance": ("imbalance", "float"),
    "method": ("method", "str"),
    "budget.epsilon": ("epsilons", "floatlist"),
    "budget.delta": ("delta", "float"),
    "label.kind": ("label_kind", "kind"),
    "label.prior": ("label_prior_path", "str"),
    "label.tau": ("label_tau", "float"),
    "label.release_epsilon": ("label_release_epsilon", "float"),
    "label.dummy_multiplier": ("dummy_multipliers", "intlist"),
    "dpsgd.clip_norm": ("clip_norm", "float"),
    "dpsgd.batch": ("batch", "int"),
    "dpsgd.epochs": ("epochs", "int"),
    "dpsgd.learning_rate": ("learning_rate", "float"),
    "dpsgd.aggregation": ("aggregation", "str"),
    "dpsgd.random_init": ("random_init", "bool"),
    "repeats": ("repeats", "int"),
    "seed": ("master_seed", "int"),
    "output_dir": ("output_dir", "str"),
}


def _parse_value(raw: str, tag: str):
    raw = raw.strip()
    if tag == "str":
        return raw
    if tag == "int":
        return int(raw)
    if tag == "optint":
        return None if raw in ("", "none") else int(raw)
    if tag == "float":
        return math.inf if raw.lower() == "inf" else float(raw)
    if tag == "bool":
        return raw.lower() in ("1", "true", "yes")
    if tag == "floatlist":
        return tuple(math.inf if p.strip().lower() == "inf" else float(p) for p in raw.split(","))
    if tag == "intlist":
        return tuple(int(p) for p in raw.split(","))
    if tag == "kind":
        return raw.removeprefix("s_")
    raise AssertionError(tag)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse the flat ``key=value`` config format (``#`` starts a comment)."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def config_from_mapping(kv: Mapping[str, str]) -> ExperimentConfig:
    """Build a config from flat keys, rejecting unknown ones."""
    fields: dict = {}
    for key, raw in kv.items():
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}")
        name, tag = CONFIG_KEYS[key]
        fields[name] = _parse_value(raw, tag)
    return ExperimentConfig(**fields)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Per-repeat metrics: accuracy matrix, CL aggregates, ledger totals."""

    method: str
    epsilon: float
    delta: float
    dummy_multiplier: int
    repeat: int
    acc: list[list[float]]
    average_accuracy: list[float]
    average_forgetting: list[float]  # nan at t = 1
    final_average_accuracy: float
    final_average_forgetting: float
    final_pooled_accuracy: float
    ledger: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilon"] = _json_float(self.epsilon)
        d["average_forgetting"] = [_json_float(v) for v in self.average_forgetting]
        d["final_average_forgetting"] = _json_float(self.final_average_forgetting)
        return d


def _json_float(v: float):
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf"
    return v


@dataclass
class ExperimentResult:
    """All repeats of all grid cells plus output file paths."""

    config: ExperimentConfig
    cells: dict[tuple[float, int], list[MetricsReport]]
    output_dir: Path

    def reports(self, epsilon: float, dummy_multiplier: int = 1) -> list[MetricsReport]:
        return self.cells[(epsilon, dummy_multiplier)]

    def median_final_accuracy(self, epsilon: float, dummy_multiplier: int = 1) -> float:
        vals = [r.final_average_accuracy for r in self.reports(epsilon, dummy_multiplier)]
        return float(np.median(vals))

    @property
    def primary(self) -> MetricsReport:
        cell = self.cells[(self.config.epsilons[0], self.config.dummy_multipliers[0])]
        ranked = sorted(cell, key=lambda r: r.final_average_accuracy)
        return ranked[len(ranked) // 2]


# ---------------------------------------------------------------------------
# One repeat
# ---------------------------------------------------------------------------


def _load_or_synth(cfg: ExperimentConfig, repeat_seed: int) -> tuple[EmbeddingDataset, LabelUniverse]:
    if cfg.emb_path is not None:
        return load_embeddings(cfg.emb_path)
    return synth_mixture(cfg.classes, cfg.per_class, cfg.dim, cfg.separation, seed=repeat_seed)


def _build_policy(cfg: ExperimentConfig, universe: LabelUniverse) -> LabelPolicy:
    if cfg.label_kind == "learned":
        return LabelPolicy.learned(cfg.label_tau, cfg.label_release_epsilon)
    if cfg.label_prior_path is not None:
        wanted = [
            line.strip()
            for line in Path(cfg.label_prior_path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        index = {name: i for i, name in enumerate(universe.names)}
        missing = [w for w in wanted if w not in index]
        if missing:
            raise ConfigurationError(f"prior label names not in the universe: {missing[:5]}")
        return LabelPolicy.from_prior(index[w] for w in wanted)
    return LabelPolicy.from_prior(range(universe.size))


def _accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    if truth.size == 0:
        return math.nan
    return float(np.mean(predicted == truth))


@dataclass
class _TaskView:
    """Train/eval split of one task, with the policy applied."""

    released: ReleasedLabelSpace
    train: EmbeddingDataset
    eval_vectors: np.ndarray
    eval_labels: np.ndarray


def _task_views(
    cfg: ExperimentConfig,
    stream: TaskStream,
    holdout: np.ndarray,
    repeat_seed: int,
) -> list[_TaskView]:
    views = []
    for t, task in enumerate(stream.tasks, start=1):
        src = np.asarray(task.source_indices, dtype=np.int64)
        task_holdout = holdout[src] if src.size else np.zeros(0, dtype=bool)
        train_raw = task.data.subset(np.flatnonzero(~task_holdout))
        eval_raw = task.data.subset(np.flatnonzero(task_holdout))
        released = resolve_label_space(train_raw, task.policy, seed_int(repeat_seed, "release", t))
        train = prepare_task_data(train_raw, task.policy, released)
        eval_data = remap_task(eval_raw, task.policy.remap) if task.policy.remap else eval_raw
        views.append(
            _TaskView(
                released=released,
                train=train,
                eval_vectors=eval_data.vectors.astype(np.float64),
                eval_labels=eval_data.labels,
            )
        )
    return views


def _label_release_records(
    cfg: ExperimentConfig, views: list[_TaskView], ledger: PrivacyLedger
) -> PrivacyLedger:
    if cfg.label_kind != "learned":
        return ledger
    bound = learned_release_delta(cfg.label_release_epsilon, cfg.label_tau)
    for t in range(1, len(views) + 1):
        rec = ReleaseRecord(t, PrivacyBudget(cfg.label_release_epsilon, bound), f"task-{t}")
        ledger = record_release(ledger, rec)
    return ledger


def run_repeat(
    cfg: ExperimentConfig, epsilon: float, dummy_multiplier: int, repeat: int
) -> MetricsReport:
    """Execute one (epsilon, dummy multiplier, repeat) cell."""
    repeat_seed = cfg.master_seed + repeat
    dataset, universe = _load_or_synth(cfg, repeat_seed)
    universe = universe.with_dummy_multiplier(dummy_multiplier)
    policy = _build_policy(cfg, universe)
    blurry = BlurryConfig(
        disjoint_fraction=cfg.disjoint_fraction,
        blurry_spread=cfg.blurry_spread,
        imbalance=cfg.imbalance,
        seed=repeat_seed,
    )
    stream = make_stream(dataset, universe, cfg.num_tasks, cfg.stream_mode, policy, blurry)
    holdout = eval_holdout_mask(len(dataset), repeat_seed)
    views = _task_views(cfg, stream, holdout, repeat_seed)

    n_train = sum(len(v.train) for v in views)
    if n_train and cfg.delta >= 1.0 / n_train:
        logger.warning(
            "delta=%g is not small against the training set size %d (1/N=%g)",
            cfg.delta,
            n_train,
            1.0 / n_train,
        )

    ledger = PrivacyLedger(mode="sequential_basic")
    ledger = _label_release_records(cfg, views, ledger)

    if cfg.method == "cosine":
        acc, ledger = _run_cosine(cfg, views, epsilon, repeat_seed, ledger)
    elif cfg.method == "ensemble":
        acc, ledger = _run_ensemble(cfg, views, epsilon, repeat_seed, ledger)
    elif cfg.method == "naive":
        acc, ledger = _run_naive(cfg, views, epsilon, repeat_seed, ledger, stream.universe)
    else:
        acc, ledger = _run_full(cfg, views, epsilon, repeat_seed, ledger)

    t_final = len(views)
    avg_acc = [average_accuracy(acc[t - 1], t) for t in range(1, t_final + 1)]
    avg_forget = [math.nan] + [average_forgetting(acc, t) for t in range(2, t_final + 1)]
    pooled = _pooled_final_accuracy(cfg, views, acc)

    ledger_view = ledger_to_json(ledger)
    try:
        par = PrivacyLedger(mode="parallel", records=ledger.records).total()
        ledger_view["parallel_total"] = {"epsilon": _json_float(par.epsilon), "delta": par.delta}
    except ScopeViolationError:
        ledger_view["parallel_total"] = None  # overlapping scopes within a task

    return MetricsReport(
        method=cfg.method,
        epsilon=epsilon,
        delta=cfg.delta,
        dummy_multiplier=dummy_multiplier,
        repeat=repeat,
        acc=acc,
        average_accuracy=avg_acc,
        average_forgetting=avg_forget,
        final_average_accuracy=avg_acc[-1],
        final_average_forgetting=avg_forget[-1] if t_final >= 2 else math.nan,
        final_pooled_accuracy=pooled,
        ledger=ledger_view,
    )


def _pooled_final_accuracy(cfg, views, acc) -> float:
    # weighted by eval counts: equals accuracy of the final model on the
    # union of all held-out records
    weights = np.array([len(v.eval_labels) for v in views], dtype=np.float64)
    finals = np.array(acc[-1], dtype=np.float64)
    if weights.sum() == 0:
        return math.nan
    mask = ~np.isnan(finals)
    return float(np.sum(finals[mask] * weights[mask]) / weights[mask].sum())


def _eval_all(predict, views, upto: int) -> list[float]:
    row = []
    for i in range(upto):
        v = views[i]
        if v.eval_labels.size == 0:
            row.append(math.nan)
            continue
        try:
            pred = predict(v.eval_vectors)
        except EmptyModelError:
            row.append(0.0)
            continue
        row.append(_accuracy(pred, v.eval_labels))
    return row


def _run_cosine(cfg, views, epsilon, repeat_seed, ledger):
    if math.isinf(epsilon):
        sigma = 0.0
    else:
        sigma = calibrate_gaussian(PrivacyBudget(epsilon, cfg.delta), 1.0).sigma
    params = GaussianParams(sigma=sigma, sensitivity=1.0)
    dim = views[0].train.dim
    table = ClassSumTable.empty(dim, sigma)
    acc = []
    for t, view in enumerate(views, start=1):
        table = update_sums(table, view.train, view.released, params, seed_int(repeat_seed, "sum", t))
        ledger = record_release(
            ledger, ReleaseRecord(t, PrivacyBudget(epsilon, cfg.delta), f"task-{t}")
        )
        acc.append(_eval_all(lambda q: predict_cosine_batch(table, q), views, t))
    return acc, ledger


def _dpsgd_config(cfg: ExperimentConfig, epsilon: float, n: int, repeat_seed: int, tag: str) -> DpSgdConfig:
    batch = max(1, min(cfg.batch, n)) if n else cfg.batch
    if math.isinf(epsilon):
        nm = 1e-10  # vanishing noise: the no-privacy reference point
    else:
        steps = cfg.epochs * math.ceil(n / batch) if n else 0
        if steps == 0:
            nm = 1e-10
        else:
            nm = calibrate_noise_multiplier(epsilon, batch / n, steps, cfg.delta)
    return DpSgdConfig(
        clip_norm=cfg.clip_norm,
        noise_multiplier=nm,
        expected_batch=batch,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        seed=seed_int(repeat_seed, "dpsgd", tag),
        random_init=cfg.random_init,
    )


def _head_predictor(heads: list[LinearHead], aggregation: str):
    ens = Ensemble(tuple(heads), aggregation)
    return lambda q: predict_ensemble_batch(ens, q)


def _run_ensemble(cfg, views, epsilon, repeat_seed, ledger):
    heads: list[LinearHead] = []
    acc = []
    for t, view in enumerate(views, start=1):
        dp_cfg = _dpsgd_config(cfg, epsilon, len(view.train), repeat_seed, f"task-{t}")
        trained = train_head(view.train, view.released, dp_cfg)
        heads.append(trained.head)
        budget = PrivacyBudget(0.0, 0.0) if trained.steps == 0 else PrivacyBudget(epsilon, cfg.delta)
        ledger = record_release(ledger, ReleaseRecord(t, budget, f"task-{t}"))
        acc.append(_eval_all(_head_predictor(heads, cfg.aggregation), views, t))
    return acc, ledger


def _run_naive(cfg, views, epsilon, repeat_seed, ledger, universe):
    train_tasks = tuple(Task(data=v.train, policy=None, source_indices=()) for v in views)
    released = [v.released for v in views]
    # noise calibrated per task: equal per-release budgets need per-size noise
    noise = [
        _dpsgd_config(cfg, epsilon, len(v.train), repeat_seed, "naive").noise_multiplier
        for v in views
    ]
    base_cfg = _dpsgd_config(cfg, epsilon, max(len(v.train) for v in views), repeat_seed, "naive")
    stream = TaskStream(train_tasks, universe)
    checkpoints = train_naive(stream, base_cfg, released, noise_multipliers=noise)
    acc = []
    for t, trained in enumerate(checkpoints, start=1):
        budget = PrivacyBudget(0.0, 0.0) if trained.steps == 0 else PrivacyBudget(epsilon, cfg.delta)
        ledger = record_release(ledger, ReleaseRecord(t, budget, f"task-{t}"))
        acc.append(_eval_all(_head_predictor([trained.head], "argmax"), views, t))
    return acc, ledger


def _run_full(cfg, views, epsilon, repeat_seed, ledger):
    merged_vectors = np.concatenate([v.train.vectors for v in views])
    merged_labels = np.concatenate([v.train.labels for v in views])
    dim = views[0].train.dim
    merged = EmbeddingDataset(dim, merged_vectors, merged_labels)
    labels: set[int] = set()
    for v in views:
        labels |= v.released.labels
    union = ReleasedLabelSpace(frozenset(labels), views[0].released.provenance)
    dp_cfg = _dpsgd_config(cfg, epsilon, len(merged), repeat_seed, "full")
    trained = train_head(merged, union, dp_cfg)
    budget = PrivacyBudget(0.0, 0.0) if trained.steps == 0 else PrivacyBudget(epsilon, cfg.delta)
    ledger = record_release(ledger, ReleaseRecord(1, budget, "all-tasks"))
    predict = _head_predictor([trained.head], "argmax")
    final_row = _eval_all(predict, views, len(views))
    acc = [final_row[:t] for t in range(1, len(views) + 1)]
    return acc, ledger


# ---------------------------------------------------------------------------
# The full grid, and file emission
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run the configured grid and write results, summary, and plot data."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(exist_ok=True)

    jobs: list[tuple[float, int, int]] = []
    for eps in cfg.epsilons:
        for r in range(cfg.repeats):
            jobs.append((eps, cfg.dummy_multipliers[0], r))
    for m in cfg.dummy_multipliers[1:]:
        for r in range(cfg.repeats):
            jobs.append((cfg.epsilons[0], m, r))

    cells: dict[tuple[float, int], list[MetricsReport]] = {}
    with ThreadPoolExecutor(max_workers=min(8, max(1, len(jobs)))) as pool:
        futures = {pool.submit(run_repeat, cfg, eps, m, r): (eps, m, r) for eps, m, r in jobs}
        for future, (eps, m, r) in futures.items():
            try:
                cells.setdefault((eps, m), []).append(future.result())
            except Exception as exc:
                raise RuntimeError(
                    f"repeat {r} failed (epsilon={eps}, dummy_multiplier={m}): {exc}"
                ) from exc
    for reports in cells.values():
        reports.sort(key=lambda rep: rep.repeat)

    _write_results_csv(cfg, cells, out / "results.csv")
    _write_summary(cfg, cells, out / "summary.json")
    _write_plot_series(cfg, cells, out / "plots")
    return ExperimentResult(config=cfg, cells=cells, output_dir=out)


def _fmt_eps(e: float) -> str:
    return "inf" if math.isinf(e) else repr(e)


def _write_results_csv(cfg, cells, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repeat", "task", "method", "epsilon", "delta", "acc", "avg_acc", "avg_forget"])
        for eps in cfg.epsilons:
            for report in cells[(eps, cfg.dummy_multipliers[0])]:
                for t in range(1, len(report.acc) + 1):
                    forget = report.average_forgetting[t - 1]
                    writer.writerow(
                        [
                            report.repeat,
                            t,
                            report.method,
                            _fmt_eps(eps),
                            report.delta,
                            f"{report.acc[t - 1][t - 1]:.6f}",
                            f"{report.average_accuracy[t - 1]:.6f}",
                            "" if math.isnan(forget) else f"{forget:.6f}",
                        ]
                    )


def _cell_stats(reports: list[MetricsReport]) -> dict:
    finals = [r.final_average_accuracy for r in reports]
    return {
        "min": float(np.min(finals)),
        "median": float(np.median(finals)),
        "max": float(np.max(finals)),
    }


def _write_summary(cfg, cells, path: Path) -> None:
    payload = {
        "config": {k: _config_echo(v) for k, v in asdict(cfg).items()},
        "cells": [
            {
                "epsilon": _json_float(eps),
                "dummy_multiplier": m,
                "final_average_accuracy": _cell_stats(reports),
                "repeats": [r.to_dict() for r in reports],
            }
            for (eps, m), reports in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        ],
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _config_echo(v):
    if isinstance(v, tuple):
        return [_json_float(x) if isinstance(x, float) else x for x in v]
    if isinstance(v, float):
        return _json_float(v)
    return v


def _write_plot_series(cfg, cells, plots: Path) -> None:
    with (plots / "accuracy_vs_epsilon.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "min", "median", "max"])
        for eps in sorted(cfg.epsilons, key=lambda e: (math.isinf(e), e)):
            stats = _cell_stats(cells[(eps, cfg.dummy_multipliers[0])])
            writer.writerow([_fmt_eps(eps), stats["min"], stats["median"], stats["max"]])
    with (plots / "accuracy_vs_dummy.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dummy_multiplier", "min", "median", "max"])
        for m in cfg.dummy_multipliers:
            stats = _cell_stats(cells[(cfg.epsilons[0], m)])
            writer.writerow([m, stats["min"], stats["median"], stats["max"]])
    finite = [e for e in cfg.epsilons if math.isfinite(e)] or [1.0]
    with (plots / "class_drop_curve.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "k", "drop_probability_lower_bound"])
        for eps, k, bound in class_loss_curve(finite, cfg.delta, k_max=32):
            writer.writerow([eps, k, f"{bound:.12g}"])
