"""Embeddings, label universes, task streams, and the EMB1 on-disk format.

EMB1 layout (little endian):

    bytes 0..3   magic "EMB1"
    bytes 4..7   u32 feature dimension K
    bytes 8..15  u64 record count N
    then N records of (u32 label id, K * f32 components)

A sidecar at ``<path>.labels.json-lines`` holds one JSON-encoded label name
per line (line number = label id); dummy labels are the trailing lines and
carry a tab-separated ``D`` marker. Vectors are stored raw; normalisation
is the consumer's job.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, IntegrityError
from .mechanisms import derive_seed

if TYPE_CHECKING:  # pragma: no cover
    from .label_space import LabelPolicy

__all__ = [
    "LabelUniverse",
    "EmbeddingDataset",
    "Task",
    "TaskStream",
    "BlurryConfig",
    "load_embeddings",
    "save_embeddings",
    "synth_mixture",
    "mixture_prototypes",
    "make_stream",
]

_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIQ")
SIDEKICK_SUFFIX = ".labels.json-lines"


@dataclass(frozen=True)
class LabelUniverse:
    """Ordered label names; dummy labels occupy the highest ids."""

    names: tuple[str, ...]
    dummy_count: int = 0

    def __post_init__(self):
        if len(self.names) < 1:
            raise ValueError("a label universe needs at least one name")
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")
        if not 0 <= self.dummy_count <= len(self.names):
            raise ValueError("dummy_count must be within the universe size")

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def real_count(self) -> int:
        return self.size - self.dummy_count

    def is_dummy(self, label: int) -> bool:
        return label >= self.real_count

    def with_dummy_multiplier(self, multiplier: int) -> "LabelUniverse":
        """Inflate to ``multiplier`` times the real class count with dummies."""
        if multiplier < 1:
            raise ValueError("dummy multiplier must be >= 1")
        extra = self.real_count * multiplier - self.size
        if extra <= 0:
            return self
        taken = set(self.names)
        fresh = []
        i = 0
        while len(fresh) < extra:
            name = f"dummy_{i:06d}"
            if name not in taken:
                fresh.append(name)
            i += 1
        return LabelUniverse(self.names + tuple(fresh), self.dummy_count + extra)


@dataclass(frozen=True)
class EmbeddingDataset:
    """Feature vectors with integer labels; the sensitive per-task data."""

    dim: int
    vectors: np.ndarray  # (N, dim) float32
    labels: np.ndarray  # (N,) int64

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ValueError(f"vectors must have shape (N, {self.dim})")
        if labels.shape != (vectors.shape[0],):
            raise ValueError("labels must be one id per vector")
        if labels.size and labels.min() < 0:
            raise ValueError("label ids must be non-negative")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "EmbeddingDataset":
        return cls(dim, np.zeros((0, dim), dtype=np.float32), np.zeros(0, dtype=np.int64))

    def subset(self, indices: np.ndarray | Sequence[int]) -> "EmbeddingDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingDataset(self.dim, self.vectors[idx], self.labels[idx])

    def present_labels(self) -> np.ndarray:
        return np.unique(self.labels)

    def validate_against(self, universe: LabelUniverse) -> None:
        if len(self) and int(self.labels.max()) >= universe.size:
            raise IntegrityError(
                f"label id {int(self.labels.max())} out of range for universe of size {universe.size}"
            )


@dataclass(frozen=True)
class Task:
    """One task of a stream: its data, label policy, and source row indices.

    ``policy`` may be None for pre-prepared streams whose data has already
    been remapped and restricted.
    """

    data: EmbeddingDataset
    policy: "LabelPolicy | None"
    source_indices: tuple[int, ...]


@dataclass(frozen=True)
class TaskStream:
    """Ordered partition of a dataset into tasks with per-task policies."""

    tasks: tuple[Task, ...]
    universe: LabelUniverse

    def __post_init__(self):
        if len(self.tasks) < 1:
            raise ValueError("a stream needs at least one task")

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class BlurryConfig:
    """Parameters of the blurry stream generators.

    ``blurry_spread`` is the number of consecutive tasks a blurry class
    spans (None means all tasks); ``imbalance`` is the max/min per-task
    share ratio used by the skewed variant.
    """

    disjoint_fraction: float = 0.5
    blurry_spread: int | None = None
    imbalance: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.disjoint_fraction <= 1.0:
            raise ValueError("disjoint_fraction must be in [0, 1]")
        if self.blurry_spread is not None and self.blurry_spread < 1:
            raise ValueError("blurry_spread must be >= 1")
        if self.imbalance < 1.0:
            raise ValueError("imbalance must be >= 1")


# ---------------------------------------------------------------------------
# EMB1 reader / writer
# ---------------------------------------------------------------------------


def _sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + SIDEKICK_SUFFIX)


def _read_sidecar(path: Path) -> LabelUniverse:
    if not path.exists():
        raise FormatError(f"missing label sidecar: {path}")
    names: list[str] = []
    dummy_flags: list[bool] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line:
            continue
        name_part, _, marker = line.partition("\t")
        try:
            name = json.loads(name_part)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno + 1}: bad label name encoding: {exc}") from exc
        if not isinstance(name, str):
            raise FormatError(f"{path}:{lineno + 1}: label name must be a JSON string")
        names.append(name)
        dummy_flags.append(marker == "D")
    if not names:
        raise FormatError(f"{path}: empty label sidecar")
    first_dummy = dummy_flags.index(True) if any(dummy_flags) else len(names)
    if not all(dummy_flags[first_dummy:]):
        raise IntegrityError(f"{path}: dummy labels must occupy the highest ids")
    return LabelUniverse(tuple(names), dummy_count=len(names) - first_dummy)


def load_embeddings(path: str | Path) -> tuple[EmbeddingDataset, LabelUniverse]:
    """Read an EMB1 file and its sidecar, preserving record order."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}")
    magic, dim, count = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if dim < 1:
        raise FormatError(f"{path}: dimension must be >= 1 (u32 at byte offset 4), got {dim}")
    record_size = 4 + 4 * dim
    expected = _HEADER.size + count * record_size
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {count} records of {record_size} bytes "
            f"(u64 count at byte offset 8), got {len(raw)}"
        )
    rec_dtype = np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))])
    records = np.frombuffer(raw, dtype=rec_dtype, count=count, offset=_HEADER.size)
    labels = records["label"].astype(np.int64)
    vectors = records["vec"].reshape(count, dim).copy()
    universe = _read_sidecar(_sidecar_path(path))
    dataset = EmbeddingDataset(dim, vectors, labels)
    dataset.validate_against(universe)
    return dataset, universe


def save_embeddings(dataset: EmbeddingDataset, universe: LabelUniverse, path: str | Path) -> None:
    """Write an EMB1 file plus sidecar; ``load_embeddings`` inverts it exactly."""
    dataset.validate_against(universe)
    path = Path(path)
    n = len(dataset)
    rec_dtype = np.dtype([("label", "<u4"), ("vec", "<f4", (dataset.dim,))])
    records = np.zeros(n, dtype=rec_dtype)
    records["label"] = dataset.labels.astype(np.uint32)
    records["vec"] = dataset.vectors
    path.write_bytes(_HEADER.pack(_MAGIC, dataset.dim, n) + records.tobytes())
    lines = []
    for i, name in enumerate(universe.names):
        suffix = "\tD" if universe.is_dummy(i) else ""
        lines.append(json.dumps(name) + suffix)
    _sidecar_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def mixture_prototypes(classes: int, dim: int, seed: int) -> np.ndarray:
    """Unit-norm class prototypes, deterministic per seed; shape (classes, dim)."""
    rng = np.random.default_rng(derive_seed(seed, "prototypes"))
    protos = rng.normal(size=(classes, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return protos


def synth_mixture(
    classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int,
) -> tuple[EmbeddingDataset, LabelUniverse]:
    """Sample a unit-norm Gaussian mixture around per-class prototypes.

    Each point is prototype + isotropic noise of scale ``1/separation``,
    renormalised to unit norm. ``separation`` may be ``inf`` (points equal
    their prototype).
    """
    if classes < 1:
        raise ValueError("classes must be >= 1")
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if not separation > 0:
        raise ValueError("separation must be > 0")
    universe = LabelUniverse(tuple(f"class_{c:04d}" for c in range(classes)))
    protos = mixture_prototypes(classes, dim, seed)
    if per_class == 0:
        return EmbeddingDataset.empty(dim), universe
    rng = np.random.default_rng(derive_seed(seed, "samples"))
    scale = 0.0 if math.isinf(separation) else 1.0 / separation
    points = np.repeat(protos, per_class, axis=0)
    if scale > 0.0:
        points = points + rng.normal(scale=scale, size=points.shape)
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    return EmbeddingDataset(dim, points.astype(np.float32), labels), universe


# ---------------------------------------------------------------------------
# Task stream construction
# ---------------------------------------------------------------------------


def _as_policy_list(policies, num_tasks: int) -> list:
    if isinstance(policies, Sequence) and not isinstance(policies, (str, bytes)):
        if len(policies) != num_tasks:
            raise ConfigurationError(
                f"need one policy per task: got {len(policies)} for {num_tasks} tasks"
            )
        return list(policies)
    return [policies] * num_tasks


def _chunk_classes(class_ids: np.ndarray, num_tasks: int) -> dict[int, int]:
    # proportional chunks over sorted ids; equals i // per_task when divisible
    n = len(class_ids)
    return {int(c): i * num_tasks // n for i, c in enumerate(np.sort(class_ids))}


def make_stream(
    dataset: EmbeddingDataset,
    universe: LabelUniverse,
    num_tasks: int,
    mode: str,
    policies,
    blurry: BlurryConfig | None = None,
) -> TaskStream:
    """Partition a dataset into an ordered task stream.

    ``disjoint`` gives each class wholly to one task; ``iblurry`` keeps a
    ``disjoint_fraction`` of classes disjoint and spreads the rest uniformly
    over windows of ``blurry_spread`` consecutive tasks; ``siblurry``
    additionally skews per-task shares by the ``imbalance`` ratio. The task
    datasets always partition the input records exactly.
    """
    if num_tasks < 1:
        raise ConfigurationError("num_tasks must be >= 1")
    if mode not in ("disjoint", "iblurry", "siblurry"):
        raise ConfigurationError(f"unknown stream mode {mode!r}")
    dataset.validate_against(universe)
    blurry = blurry or BlurryConfig()
    policy_list = _as_policy_list(policies, num_tasks)

    class_ids = dataset.present_labels()
    n = len(dataset)
    task_of_record = np.zeros(n, dtype=np.int64)

    if mode == "disjoint":
        if len(class_ids) % num_tasks != 0:
            raise ConfigurationError(
                f"disjoint mode needs class count ({len(class_ids)}) divisible by "
                f"task count ({num_tasks})"
            )
        for c, t in _chunk_classes(class_ids, num_tasks).items():
            task_of_record[dataset.labels == c] = t
    else:
        rng = np.random.default_rng(derive_seed(blurry.seed, "stream", mode))
        spread = blurry.blurry_spread or num_tasks
        if spread > num_tasks:
            raise ConfigurationError("blurry_spread cannot exceed the task count")
        n_disjoint = int(round(blurry.disjoint_fraction * len(class_ids)))
        shuffled = rng.permutation(class_ids)
        disjoint_classes = shuffled[:n_disjoint]
        blurry_classes = shuffled[n_disjoint:]
        for c, t in _chunk_classes(disjoint_classes, num_tasks).items():
            task_of_record[dataset.labels == c] = t
        for c in blurry_classes:
            start = int(rng.integers(0, num_tasks - spread + 1))
            window = np.arange(start, start + spread)
            if mode == "iblurry" or spread == 1:
                weights = np.full(spread, 1.0 / spread)
            else:
                ramp = 1.0 + (blurry.imbalance - 1.0) * (spread - 1 - np.arange(spread)) / (spread - 1)
                ramp = np.roll(ramp, int(rng.integers(0, spread)))
                weights = ramp / ramp.sum()
            members = np.flatnonzero(dataset.labels == c)
            task_of_record[members] = rng.choice(window, size=len(members), p=weights)

    tasks = []
    for t in range(num_tasks):
        idx = np.flatnonzero(task_of_record == t)
        tasks.append(
            Task(
                data=dataset.subset(idx),
                policy=policy_list[t],
                source_indices=tuple(int(i) for i in idx),
            )
        )
    return TaskStream(tuple(tasks), universe)
