"""Cosine prototype classifier over cumulative DP per-class feature sums.

Each task adds, for every label in the released space, the sum of that
class's unit-normalised feature vectors plus one fresh Gaussian draw -- a
released class with no samples in the task still receives its draw, so the
update never reveals which classes were present. Sums (never means) are
kept: per-class counts are not computed into any exported artifact.

Prediction returns the stored class whose sum maximises cosine similarity
with the query. Table memory is O(dim * released classes), independent of
sample count.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .datasets import EmbeddingDataset, LabelUniverse, load_embeddings, save_embeddings
from .errors import EmptyModelError
from .label_space import ReleasedLabelSpace
from .mechanisms import GaussianParams, derive_seed, gaussian_noise

logger = logging.getLogger(__name__)

__all__ = [
    "ClassSumTable",
    "update_sums",
    "predict_cosine",
    "predict_cosine_batch",
    "save_table",
    "load_table",
]


@dataclass(frozen=True)
class ClassSumTable:
    """Cumulative noisy per-class feature sums."""

    dim: int
    sums: Mapping[int, np.ndarray]  # label id -> float64 vector of length dim
    noise_sigma: float
    seen_tasks: int = 0

    def __post_init__(self):
        for label, vec in self.sums.items():
            if vec.shape != (self.dim,):
                raise ValueError(f"sum for label {label} has shape {vec.shape}, want ({self.dim},)")
        object.__setattr__(self, "sums", MappingProxyType(dict(self.sums)))

    @classmethod
    def empty(cls, dim: int, noise_sigma: float = 0.0) -> "ClassSumTable":
        return cls(dim=dim, sums={}, noise_sigma=noise_sigma)

    def __len__(self) -> int:
        return len(self.sums)


def _unit_rows(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalise rows to unit norm; returns (normalised, keep mask)."""
    v = vectors.astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    keep = norms > 0.0
    v[keep] /= norms[keep, None]
    return v, keep


def update_sums(
    table: ClassSumTable,
    task_data: EmbeddingDataset,
    released: ReleasedLabelSpace,
    params: GaussianParams,
    seed: int,
) -> ClassSumTable:
    """Fold one task into the table.

    Every label of ``released`` gets the class's normalised-feature sum plus
    one N(0, sigma^2 I) draw; labels outside the released space are left
    untouched. Zero-norm vectors cannot be normalised and are skipped with a
    logged count.
    """
    if task_data.dim != table.dim:
        raise ValueError(f"data dim {task_data.dim} != table dim {table.dim}")
    if params.sensitivity != 1.0:
        raise ValueError("per-class sensitivity must be 1 (unit-norm summands)")
    present = set(map(int, task_data.present_labels()))
    extra = present - set(released.labels)
    if extra:
        raise ValueError(f"task data contains labels outside the released space: {sorted(extra)}")

    unit, keep = _unit_rows(task_data.vectors)
    skipped = int(np.count_nonzero(~keep))
    if skipped:
        logger.warning("skipped %d zero-norm vectors during class-sum update", skipped)

    new_sums = dict(table.sums)
    for label in sorted(released.labels):
        members = keep & (task_data.labels == label)
        data_sum = unit[members].sum(axis=0) if members.any() else np.zeros(table.dim)
        noise = gaussian_noise(table.dim, params, derive_seed(seed, "class-sum", label))
        new_sums[label] = new_sums.get(label, np.zeros(table.dim)) + data_sum + noise
    return ClassSumTable(
        dim=table.dim,
        sums=new_sums,
        noise_sigma=params.sigma,
        seen_tasks=table.seen_tasks + 1,
    )


def _table_matrix(table: ClassSumTable) -> tuple[np.ndarray, np.ndarray]:
    labels = np.array(sorted(table.sums), dtype=np.int64)
    mat = np.stack([table.sums[int(c)] for c in labels]) if len(labels) else np.zeros((0, table.dim))
    return labels, mat


def predict_cosine_batch(table: ClassSumTable, queries: np.ndarray) -> np.ndarray:
    """Predicted label per query row; ties resolve to the lowest label id."""
    if len(table) == 0:
        raise EmptyModelError("cannot predict from a table with no classes")
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != table.dim:
        raise ValueError(f"queries must have shape (N, {table.dim})")
    q_norms = np.linalg.norm(queries, axis=1)
    if np.any(q_norms == 0.0):
        raise ValueError("cannot rank a zero-norm query by cosine similarity")
    labels, mat = _table_matrix(table)
    s_norms = np.linalg.norm(mat, axis=1)
    sims = (queries / q_norms[:, None]) @ mat.T
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(s_norms[None, :] > 0.0, sims / np.maximum(s_norms, 1e-300)[None, :], -np.inf)
    return labels[np.argmax(sims, axis=1)]


def predict_cosine(table: ClassSumTable, query: np.ndarray) -> int:
    """Label of the stored class most cosine-similar to ``query``."""
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    return int(predict_cosine_batch(table, query)[0])


def save_table(table: ClassSumTable, universe: LabelUniverse, path: str | Path) -> None:
    """Checkpoint the table: EMB1 of (class id, sum vector) plus a JSON header."""
    path = Path(path)
    labels, mat = _table_matrix(table)
    ds = EmbeddingDataset(table.dim, mat.astype(np.float32), labels)
    save_embeddings(ds, universe, path)
    header = {"sigma": table.noise_sigma, "dim": table.dim, "seen_tasks": table.seen_tasks}
    path.with_name(path.name + ".meta.json").write_text(json.dumps(header), encoding="utf-8")


def load_table(path: str | Path) -> tuple[ClassSumTable, LabelUniverse]:
    """Inverse of :func:`save_table` (sums round-trip at float32 precision)."""
    path = Path(path)
    ds, universe = load_embeddings(path)
    header = json.loads(path.with_name(path.name + ".meta.json").read_text(encoding="utf-8"))
    sums = {int(label): ds.vectors[i].astype(np.float64) for i, label in enumerate(ds.labels)}
    table = ClassSumTable(
        dim=header["dim"],
        sums=sums,
        noise_sigma=header["sigma"],
        seen_tasks=header["seen_tasks"],
    )
    return table, universe
