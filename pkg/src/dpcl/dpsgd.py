"""Per-task linear softmax heads trained with DP-SGD, plus the baselines.

Each step Poisson-subsamples the task data, clips every per-sample gradient
to L2 norm at most C, sums, adds N(0, (C * noise_multiplier)^2 I), divides
by the expected batch size, and applies a plain SGD step. Heads are
zero-initialised by default; a config switch enables random initialisation.
An empty task still yields a head (never an absence signal).

The ensemble predicts the label of the single largest logit across all
heads (``argmax``), or first subtracts each head's median logit
(``median``). The naive baseline keeps training one head across tasks; the
full-data baseline trains one head on the concatenated stream.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datasets import EmbeddingDataset, LabelUniverse, TaskStream, load_embeddings, save_embeddings
from .errors import ConfigurationError, DivergenceError, EmptyModelError
from .kernels import clipped_grad_sums
from .label_space import (
    ReleasedLabelSpace,
    prepare_task_data,
    resolve_label_space,
    restrict_to_released,
)
from .mechanisms import derive_seed

__all__ = [
    "DpSgdConfig",
    "LinearHead",
    "TrainedHead",
    "StepStats",
    "Ensemble",
    "softmax_xent_grads",
    "train_head",
    "predict_ensemble",
    "predict_ensemble_batch",
    "train_naive",
    "train_full",
    "save_head",
    "load_head",
]


@dataclass(frozen=True)
class DpSgdConfig:
    """DP-SGD hyperparameters for one training run."""

    clip_norm: float
    noise_multiplier: float
    expected_batch: int
    epochs: int
    learning_rate: float
    seed: int = 0
    random_init: bool = False

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if not self.noise_multiplier > 0:
            raise ValueError("noise_multiplier must be > 0")
        if self.expected_batch < 1:
            raise ValueError("expected_batch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class LinearHead:
    """Softmax head over the released labels of one task."""

    out_labels: ReleasedLabelSpace
    weights: np.ndarray  # (L, K) float64, rows follow sorted label order
    bias: np.ndarray  # (L,) float64

    def __post_init__(self):
        n = len(self.out_labels.labels)
        if self.weights.shape[0] != n or self.bias.shape != (n,):
            raise ValueError("row count must equal the released label count")

    @classmethod
    def zeros(cls, released: ReleasedLabelSpace, dim: int) -> "LinearHead":
        n = len(released.labels)
        return cls(released, np.zeros((n, dim)), np.zeros(n))

    @property
    def labels(self) -> list[int]:
        return self.out_labels.sorted_labels()

    def logits(self, query: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(query, dtype=np.float64) + self.bias


@dataclass(frozen=True)
class TrainedHead:
    """A trained head plus the inputs the accountant needs."""

    head: LinearHead
    noise_multiplier: float
    sample_rate: float
    steps: int


@dataclass(frozen=True)
class StepStats:
    """Per-step instrumentation for clipping assertions and diagnostics."""

    step: int
    batch_size: int
    max_clipped_norm: float
    loss: float


@dataclass(frozen=True)
class Ensemble:
    """Ordered per-task heads with an aggregation rule."""

    heads: tuple[LinearHead, ...]
    aggregation: str = "argmax"

    def __post_init__(self):
        if self.aggregation not in ("argmax", "median"):
            raise ValueError(f"aggregation must be argmax|median, got {self.aggregation!r}")


def softmax_xent_grads(
    feats: np.ndarray, label_rows: np.ndarray, weights: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-sample logit gradients (softmax - onehot) and the mean CE loss."""
    logits = feats @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = feats.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), label_rows] + 1e-300)))
    grad = probs
    grad[np.arange(n), label_rows] -= 1.0
    return grad, loss


def _sgd_loop(
    data: EmbeddingDataset,
    released: ReleasedLabelSpace,
    cfg: DpSgdConfig,
    weights: np.ndarray,
    bias: np.ndarray,
    rng: np.random.Generator,
    step_hook: Callable[[StepStats], None] | None,
    clamp_batch: bool,
) -> TrainedHead:
    """The DP-SGD engine shared by fresh heads and continued training."""
    sorted_labels = released.sorted_labels()
    row_of = {label: i for i, label in enumerate(sorted_labels)}
    extra = set(map(int, data.present_labels())) - set(sorted_labels)
    if extra:
        raise ValueError(f"data contains labels outside the released space: {sorted(extra)}")

    n = len(data)
    if n == 0 or cfg.epochs == 0:
        return TrainedHead(LinearHead(released, weights, bias), cfg.noise_multiplier, 1.0, 0)
    if cfg.expected_batch > n and not clamp_batch:
        raise ConfigurationError(
            f"expected_batch ({cfg.expected_batch}) exceeds the dataset size ({n})"
        )
    batch_size = min(cfg.expected_batch, n)
    q = batch_size / n
    steps = cfg.epochs * math.ceil(n / batch_size)
    feats = data.vectors.astype(np.float64)
    label_rows = np.array([row_of[int(y)] for y in data.labels], dtype=np.int64)
    noise_sigma = cfg.clip_norm * cfg.noise_multiplier

    for step in range(steps):
        batch = np.flatnonzero(rng.random(n) < q)
        if batch.size:
            grad_logits, loss = softmax_xent_grads(feats[batch], label_rows[batch], weights, bias)
            sum_w, sum_b, max_norm = clipped_grad_sums(feats[batch], grad_logits, cfg.clip_norm)
        else:
            sum_w, sum_b = np.zeros_like(weights), np.zeros_like(bias)
            max_norm, loss = 0.0, 0.0
        sum_w += rng.normal(scale=noise_sigma, size=sum_w.shape)
        sum_b += rng.normal(scale=noise_sigma, size=sum_b.shape)
        weights -= cfg.learning_rate * sum_w / batch_size
        bias -= cfg.learning_rate * sum_b / batch_size
        if not (math.isfinite(loss) and np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise DivergenceError(step)
        if step_hook is not None:
            step_hook(StepStats(step, int(batch.size), max_norm, loss))
    return TrainedHead(LinearHead(released, weights, bias), cfg.noise_multiplier, q, steps)


def train_head(
    data: EmbeddingDataset,
    released: ReleasedLabelSpace,
    cfg: DpSgdConfig,
    step_hook: Callable[[StepStats], None] | None = None,
) -> TrainedHead:
    """DP-SGD on softmax cross-entropy over ``data``.

    ``data`` labels must lie inside the released space. Empty data returns
    the initial head with zero steps. Raises :class:`DivergenceError` with
    the step index if the loss or a parameter turns non-finite.
    """
    n_out = len(released.labels)
    if cfg.random_init:
        init_rng = np.random.default_rng(derive_seed(cfg.seed, "init"))
        weights = init_rng.normal(scale=0.01, size=(n_out, data.dim))
        bias = init_rng.normal(scale=0.01, size=n_out)
    else:
        weights = np.zeros((n_out, data.dim))
        bias = np.zeros(n_out)
    rng = np.random.default_rng(derive_seed(cfg.seed, "dpsgd", 0))
    return _sgd_loop(data, released, cfg, weights, bias, rng, step_hook, clamp_batch=False)


def _head_scores(head: LinearHead, queries: np.ndarray, aggregation: str) -> np.ndarray:
    logits = queries @ head.weights.T + head.bias
    if aggregation == "median" and logits.shape[1] > 0:
        logits = logits - np.median(logits, axis=1, keepdims=True)
    return logits


def predict_ensemble_batch(ens: Ensemble, queries: np.ndarray) -> np.ndarray:
    """Predicted label per query; ties break to (earliest task, lowest label)."""
    if not ens.heads:
        raise EmptyModelError("cannot predict from an empty ensemble")
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        raise ValueError("queries must be a (N, K) array")
    score_blocks, label_blocks = [], []
    for head in ens.heads:
        if not head.labels:
            continue
        score_blocks.append(_head_scores(head, queries, ens.aggregation))
        label_blocks.append(head.labels)
    if not score_blocks:
        raise EmptyModelError("no head in the ensemble carries any label")
    scores = np.concatenate(score_blocks, axis=1)
    flat_labels = np.array([lbl for block in label_blocks for lbl in block], dtype=np.int64)
    # columns are ordered (task asc, label asc); first-max argmax = tie rule
    return flat_labels[np.argmax(scores, axis=1)]


def predict_ensemble(ens: Ensemble, query: np.ndarray) -> int:
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    return int(predict_ensemble_batch(ens, query)[0])


def _resolved_spaces(stream: TaskStream, cfg: DpSgdConfig) -> list[ReleasedLabelSpace]:
    return [
        resolve_label_space(task.data, task.policy, derive_seed(cfg.seed, "label-release", t))
        for t, task in enumerate(stream.tasks, start=1)
    ]


def _prepared(task, released: ReleasedLabelSpace) -> EmbeddingDataset:
    if task.policy is None:
        return restrict_to_released(task.data, released)
    return prepare_task_data(task.data, task.policy, released)


def _union_space(spaces: Sequence[ReleasedLabelSpace]) -> ReleasedLabelSpace:
    labels: set[int] = set()
    for s in spaces:
        labels |= s.labels
    provenance = "data" if any(s.provenance == "data" for s in spaces) else spaces[0].provenance
    return ReleasedLabelSpace(frozenset(labels), provenance)


def train_naive(
    stream: TaskStream,
    cfg: DpSgdConfig,
    released_per_task: Sequence[ReleasedLabelSpace] | None = None,
    noise_multipliers: Sequence[float] | None = None,
) -> list[TrainedHead]:
    """Sequentially fine-tune one head across tasks; checkpoint after each.

    The head spans the union of the per-task released spaces. Returns one
    entry per task holding that checkpoint and the task's accounting inputs.
    ``noise_multipliers`` optionally overrides the noise per task (tasks of
    different sizes need different noise to meet the same per-task budget).
    """
    if released_per_task is None:
        released_per_task = _resolved_spaces(stream, cfg)
    union = _union_space(released_per_task)
    sorted_labels = union.sorted_labels()
    dim = stream.tasks[0].data.dim
    weights = np.zeros((len(sorted_labels), dim))
    bias = np.zeros(len(sorted_labels))

    checkpoints: list[TrainedHead] = []
    for t, task in enumerate(stream.tasks):
        data = _prepared(task, released_per_task[t])
        task_cfg = cfg
        if noise_multipliers is not None:
            task_cfg = replace(cfg, noise_multiplier=noise_multipliers[t])
        trained = _continue_training(data, union, task_cfg, weights, bias, task_index=t)
        weights, bias = trained.head.weights, trained.head.bias
        checkpoints.append(trained)
    return checkpoints


def _continue_training(
    data: EmbeddingDataset,
    released: ReleasedLabelSpace,
    cfg: DpSgdConfig,
    weights: np.ndarray,
    bias: np.ndarray,
    task_index: int,
) -> TrainedHead:
    """One DP-SGD pass starting from existing parameters."""
    rng = np.random.default_rng(derive_seed(cfg.seed, "dpsgd", task_index))
    return _sgd_loop(
        data, released, cfg, weights.copy(), bias.copy(), rng, None, clamp_batch=True
    )


def config_digest(cfg: DpSgdConfig) -> str:
    """Stable short digest of the hyperparameters used for a checkpoint."""
    blob = json.dumps(
        {
            "clip_norm": cfg.clip_norm,
            "noise_multiplier": cfg.noise_multiplier,
            "expected_batch": cfg.expected_batch,
            "epochs": cfg.epochs,
            "learning_rate": cfg.learning_rate,
            "seed": cfg.seed,
            "random_init": cfg.random_init,
        },
        sort_keys=True,
    )
    return hashlib.blake2b(blob.encode("utf-8"), digest_size=8).hexdigest()


def save_head(head: LinearHead, path: str | Path, cfg: DpSgdConfig | None = None) -> None:
    """Checkpoint a head: JSON header plus an EMB1-style parameter blob.

    Each record carries one label's weight row with its bias appended as a
    final component (blob dimension = K + 1).
    """
    path = Path(path)
    labels = head.labels
    k = head.weights.shape[1]
    rows = np.concatenate([head.weights, head.bias[:, None]], axis=1).astype(np.float32)
    # records are positional (row i of the head); true label ids live in the header
    blob = EmbeddingDataset(k + 1, rows, np.arange(len(labels), dtype=np.int64))
    names = tuple(f"label_{lbl:06d}" for lbl in labels) or ("empty",)
    save_embeddings(blob, LabelUniverse(names), path)
    header = {
        "labels": labels,
        "dim": k,
        "provenance": head.out_labels.provenance,
        "cfg_digest": config_digest(cfg) if cfg is not None else None,
    }
    path.with_name(path.name + ".meta.json").write_text(json.dumps(header), encoding="utf-8")


def load_head(path: str | Path) -> LinearHead:
    """Inverse of :func:`save_head` (float32 storage precision)."""
    path = Path(path)
    blob, _ = load_embeddings(path)
    header = json.loads(path.with_name(path.name + ".meta.json").read_text(encoding="utf-8"))
    k = header["dim"]
    if blob.dim != k + 1:
        raise ValueError(f"checkpoint blob dimension {blob.dim} does not match K+1={k + 1}")
    labels = [int(lbl) for lbl in header["labels"]]
    if len(labels) != len(blob):
        raise ValueError("checkpoint header labels do not match the blob row count")
    order = np.argsort(blob.labels)  # row i holds sorted-label position i
    weights = blob.vectors[order, :k].astype(np.float64)
    bias = blob.vectors[order, k].astype(np.float64)
    released = ReleasedLabelSpace(frozenset(labels), header["provenance"])
    return LinearHead(released, weights, bias)


def train_full(
    stream: TaskStream,
    cfg: DpSgdConfig,
    released_per_task: Sequence[ReleasedLabelSpace] | None = None,
) -> TrainedHead:
    """Train one head on the concatenation of all task data (non-CL bound)."""
    if released_per_task is None:
        released_per_task = _resolved_spaces(stream, cfg)
    union = _union_space(released_per_task)
    parts = [_prepared(task, released_per_task[t]) for t, task in enumerate(stream.tasks)]
    dim = stream.tasks[0].data.dim
    vectors = np.concatenate([p.vectors for p in parts]) if parts else np.zeros((0, dim), np.float32)
    labels = np.concatenate([p.labels for p in parts]) if parts else np.zeros(0, np.int64)
    merged = EmbeddingDataset(dim, vectors, labels)
    batch = min(cfg.expected_batch, len(merged)) if len(merged) else cfg.expected_batch
    return train_head(merged, union, replace(cfg, expected_batch=batch))
