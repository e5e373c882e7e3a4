"""Output-label-space policies, label remapping, and release failure bounds.

A released classifier exposes its set of output labels, which is itself an
information channel. Three policies are supported:

* ``data``  - labels read off the sensitive data. Not DP (the released set
  is a function of the data); kept as a negative control and always flagged
  non-private.
* ``prior`` - a data-independent public label set, optionally paired with a
  remap table that rewrites or drops labels outside the prior.
* ``learned`` - a per-class thresholded Laplace count test: label ``y`` is
  released iff ``|D_y| + Lap(1/eps) > tau``. This is (eps, delta)-DP only
  for delta at least the lower bound computed by
  :func:`learned_release_delta`; no pure-DP (delta = 0) variant exists, and
  requests for one are rejected.

Small classes pay for the learned policy: a class with k examples is kept
out of the released space with probability at least ``1 - delta_k`` where
``delta_k`` is the group-DP degradation of delta (see
:func:`class_drop_lower_bound` and :func:`class_loss_curve`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .accountant import GroupDPQuery, group_dp_delta
from .datasets import EmbeddingDataset
from .errors import LabelReleaseError, MappingError
from .mechanisms import LaplaceParams, derive_seed, laplace_noise, laplace_tail

__all__ = [
    "DROP",
    "RemapTable",
    "LabelPolicy",
    "ReleasedLabelSpace",
    "remap_task",
    "resolve_label_space",
    "learned_release_delta",
    "check_learned_delta",
    "class_drop_lower_bound",
    "class_loss_curve",
]


class _Drop:
    """Sentinel remap target: discard the sample."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DROP"


DROP = _Drop()


@dataclass(frozen=True)
class RemapTable:
    """Map from data labels to released labels (or DROP)."""

    entries: Mapping[int, int | _Drop]

    def target(self, label: int) -> int | _Drop:
        try:
            return self.entries[label]
        except KeyError:
            raise MappingError(f"no remap entry for label {label}") from None


@dataclass(frozen=True)
class LabelPolicy:
    """How the released output label space of a task is chosen."""

    kind: str
    prior: frozenset[int] | None = None
    remap: RemapTable | None = None
    threshold_tau: float | None = None
    release_epsilon: float | None = None

    def __post_init__(self):
        if self.kind not in ("data", "prior", "learned"):
            raise ValueError(f"kind must be data|prior|learned, got {self.kind!r}")
        if self.kind == "prior":
            if not self.prior:
                raise ValueError("a prior policy needs a non-empty prior label set")
            if self.remap is not None:
                bad = [
                    lbl
                    for lbl, tgt in self.remap.entries.items()
                    if tgt is not DROP and tgt not in self.prior
                ]
                if bad:
                    raise ValueError(f"remap targets outside the prior set: {sorted(bad)}")
        if self.kind == "learned":
            if self.threshold_tau is None or self.release_epsilon is None:
                raise ValueError("a learned policy needs threshold_tau and release_epsilon")
            if not self.release_epsilon > 0:
                raise ValueError("release_epsilon must be > 0")

    @classmethod
    def from_data(cls) -> "LabelPolicy":
        return cls(kind="data")

    @classmethod
    def from_prior(cls, prior: Iterable[int], remap: RemapTable | None = None) -> "LabelPolicy":
        return cls(kind="prior", prior=frozenset(int(p) for p in prior), remap=remap)

    @classmethod
    def learned(cls, tau: float, release_epsilon: float) -> "LabelPolicy":
        return cls(kind="learned", threshold_tau=tau, release_epsilon=release_epsilon)


@dataclass(frozen=True)
class ReleasedLabelSpace:
    """The label set a task's classifier is allowed to emit."""

    labels: frozenset[int]
    provenance: str

    def __post_init__(self):
        if self.provenance not in ("data", "prior", "learned"):
            raise ValueError(f"bad provenance {self.provenance!r}")

    @property
    def non_private(self) -> bool:
        """True when the release itself leaks the data (the data policy)."""
        return self.provenance == "data"

    def sorted_labels(self) -> list[int]:
        return sorted(self.labels)


def remap_task(data: EmbeddingDataset, table: RemapTable) -> EmbeddingDataset:
    """Rewrite labels through ``table``, discarding DROP targets.

    Record order is preserved; every label present in ``data`` must have an
    entry.
    """
    if len(data) == 0:
        return data
    keep = np.ones(len(data), dtype=bool)
    new_labels = data.labels.copy()
    for label in map(int, data.present_labels()):
        tgt = table.target(label)
        mask = data.labels == label
        if tgt is DROP:
            keep &= ~mask
        else:
            new_labels[mask] = int(tgt)
    return EmbeddingDataset(data.dim, data.vectors[keep], new_labels[keep])


def resolve_label_space(
    data: EmbeddingDataset, policy: LabelPolicy, seed: int
) -> ReleasedLabelSpace:
    """Produce the released label space of one task under ``policy``.

    Never signals absence of output: even empty data yields a (possibly
    empty) label set that downstream classifiers must accept.
    """
    if policy.kind == "data":
        return ReleasedLabelSpace(
            labels=frozenset(int(c) for c in data.present_labels()), provenance="data"
        )
    if policy.kind == "prior":
        return ReleasedLabelSpace(labels=policy.prior, provenance="prior")
    params = LaplaceParams(1.0 / policy.release_epsilon)
    released = set()
    for label in map(int, data.present_labels()):
        count = int(np.count_nonzero(data.labels == label))
        noise = float(laplace_noise(1, params, derive_seed(seed, "label-release", label))[0])
        if count + noise > policy.threshold_tau:
            released.add(label)
    return ReleasedLabelSpace(labels=frozenset(released), provenance="learned")


def restrict_to_released(data: EmbeddingDataset, released: ReleasedLabelSpace) -> EmbeddingDataset:
    """Drop records whose label is outside the released space."""
    if len(data) == 0:
        return data
    allowed = np.isin(data.labels, np.array(sorted(released.labels), dtype=np.int64))
    if allowed.all():
        return data
    return EmbeddingDataset(data.dim, data.vectors[allowed], data.labels[allowed])


def prepare_task_data(
    data: EmbeddingDataset, policy: LabelPolicy, released: ReleasedLabelSpace
) -> EmbeddingDataset:
    """Remap (when the policy carries a table) then restrict to the release."""
    if policy.remap is not None:
        data = remap_task(data, policy.remap)
    return restrict_to_released(data, released)


def learned_release_delta(epsilon: float, tau: float) -> float:
    """Lower bound on delta for the thresholded-Laplace label release.

    For an adjacent dataset adding a single record with a novel label, the
    release mechanism is (epsilon, delta)-DP only for

        delta >= max(1 - e^eps * d*,  1/d* - e^eps,  1 - d*)

    where ``d* = Pr[1 + Lap(1/eps) <= tau]``. The bound is clamped to
    [0, 1]; as tau -> -inf the mechanism always releases the new label and
    the bound reaches 1.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    d_star = laplace_tail(tau - 1.0, LaplaceParams(1.0 / epsilon))
    if d_star == 0.0:
        return 1.0
    e_eps = math.exp(epsilon)
    bound = max(1.0 - e_eps * d_star, 1.0 / d_star - e_eps, 1.0 - d_star)
    return min(1.0, max(0.0, bound))


def check_learned_delta(epsilon: float, tau: float, delta_budget: float) -> float:
    """Validate a delta budget for the learned release; returns the bound.

    A zero (pure-DP) budget is always rejected: no epsilon-only mechanism
    can both stay inside the data labels and never release an empty set.
    """
    bound = learned_release_delta(epsilon, tau)
    if delta_budget < bound:
        raise LabelReleaseError(
            f"label release at epsilon={epsilon}, tau={tau} requires delta >= {bound:.6g}; "
            f"got {delta_budget:.6g}"
            + (" (pure-DP label protection is impossible)" if delta_budget == 0 else "")
        )
    return bound


def class_drop_lower_bound(epsilon: float, delta: float, class_size: int) -> float:
    """Lower bound on the probability that a k-example class is not released.

    Uses the group-DP degradation ``delta_k``: any (epsilon, delta)-DP
    release keeps a class of ``class_size`` examples out of the output
    space with probability at least ``1 - delta_k``.
    """
    dk = group_dp_delta(GroupDPQuery(epsilon=epsilon, delta=delta, k=class_size))
    return min(1.0, max(0.0, 1.0 - dk))


def class_loss_curve(
    epsilons: Sequence[float], delta: float, k_max: int
) -> list[tuple[float, int, float]]:
    """Grid of (epsilon, k, 1 - delta_k) rows for plotting the drop bound."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    rows = []
    for eps in epsilons:
        for k in range(1, k_max + 1):
            rows.append((float(eps), k, class_drop_lower_bound(eps, delta, k)))
    return rows
