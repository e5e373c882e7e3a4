"""Cosine prototype classifier: sum updates, prediction, checkpoints."""

from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from dpcl.cosine import (
    ClassSumTable,
    load_table,
    predict_cosine,
    predict_cosine_batch,
    save_table,
    update_sums,
)
from dpcl.datasets import EmbeddingDataset, LabelUniverse, make_stream, synth_mixture
from dpcl.errors import EmptyModelError
from dpcl.label_space import LabelPolicy, ReleasedLabelSpace
from dpcl.mechanisms import GaussianParams

# Hand evaluation of the prediction rule on sums A=(1.6,0.8), B=(0,1) and
# query (0.9,0.1)/||.||: cos(q,A) and cos(q,B).
COS_Q_A = 0.9383431168171101
COS_Q_B = 0.11043152607484655


def _data(vectors, labels):
    arr = np.asarray(vectors, dtype=np.float32)
    return EmbeddingDataset(arr.shape[1], arr, np.asarray(labels, dtype=np.int64))


def _released(labels):
    return ReleasedLabelSpace(frozenset(labels), "prior")


NOISELESS = GaussianParams(0.0, 1.0)


class TestUpdateSums:
    def test_single_unit_vector(self):
        table = ClassSumTable.empty(2)
        data = _data([[0.6, 0.8]], [0])
        table = update_sums(table, data, _released({0}), NOISELESS, seed=0)
        assert np.allclose(table.sums[0], [0.6, 0.8], atol=1e-7)

    def test_two_axis_vectors_sum(self):
        table = ClassSumTable.empty(2)
        data = _data([[1.0, 0.0], [0.0, 1.0]], [3, 3])
        table = update_sums(table, data, _released({3}), NOISELESS, seed=0)
        assert np.allclose(table.sums[3], [1.0, 1.0], atol=1e-7)

    def test_released_label_without_samples_still_gets_noise(self):
        table = ClassSumTable.empty(4)
        data = _data([[1.0, 0.0, 0.0, 0.0]], [0])
        params = GaussianParams(0.5, 1.0)
        table = update_sums(table, data, _released({0, 1}), params, seed=7)
        assert 1 in table.sums
        assert np.linalg.norm(table.sums[1]) > 0.0  # one pure-noise draw

    def test_labels_outside_release_rejected(self):
        table = ClassSumTable.empty(2)
        data = _data([[1.0, 0.0]], [5])
        with pytest.raises(ValueError, match="outside the released space"):
            update_sums(table, data, _released({0}), NOISELESS, seed=0)

    def test_untouched_classes_keep_their_sums(self):
        table = ClassSumTable.empty(2)
        table = update_sums(table, _data([[1.0, 0.0]], [0]), _released({0}), NOISELESS, 0)
        before = dict(table.sums)
        table = update_sums(table, _data([[0.0, 1.0]], [1]), _released({1}), NOISELESS, 1)
        assert np.array_equal(table.sums[0], before[0])

    def test_zero_norm_vectors_skipped_with_count(self, caplog):
        table = ClassSumTable.empty(2)
        data = _data([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]], [0, 0, 0])
        with caplog.at_level(logging.WARNING, logger="dpcl.cosine"):
            table = update_sums(table, data, _released({0}), NOISELESS, seed=0)
        assert "2 zero-norm" in caplog.text
        assert np.allclose(table.sums[0], [1.0, 0.0], atol=1e-7)

    def test_sensitivity_must_be_one(self):
        with pytest.raises(ValueError, match="sensitivity"):
            update_sums(
                ClassSumTable.empty(2),
                _data([[1.0, 0.0]], [0]),
                _released({0}),
                GaussianParams(0.0, 2.0),
                seed=0,
            )

    def test_deterministic_per_seed(self):
        data = _data([[1.0, 0.0]], [0])
        params = GaussianParams(1.0, 1.0)
        t1 = update_sums(ClassSumTable.empty(2), data, _released({0, 1}), params, seed=5)
        t2 = update_sums(ClassSumTable.empty(2), data, _released({0, 1}), params, seed=5)
        assert np.array_equal(t1.sums[0], t2.sums[0])
        assert np.array_equal(t1.sums[1], t2.sums[1])


class TestPredict:
    def _table(self, sums):
        dim = len(next(iter(sums.values())))
        return ClassSumTable(dim, {k: np.asarray(v, dtype=np.float64) for k, v in sums.items()}, 0.0)

    def test_exact_direction_wins(self):
        table = self._table({0: [1.0, 0.0], 1: [0.0, 1.0]})
        assert predict_cosine(table, np.array([10.0, 0.1])) == 0

    def test_hand_oracle_example(self):
        table = self._table({0: [1.6, 0.8], 1: [0.0, 1.0]})
        q = np.array([0.9, 0.1]) / np.hypot(0.9, 0.1)
        # direct evaluation of both similarities
        sims = {
            c: float(q @ s / (np.linalg.norm(q) * np.linalg.norm(s)))
            for c, s in table.sums.items()
        }
        assert sims[0] == pytest.approx(COS_Q_A, abs=1e-12)
        assert sims[1] == pytest.approx(COS_Q_B, abs=1e-12)
        assert predict_cosine(table, q) == 0

    def test_scale_invariance(self):
        table = self._table({0: [1.6, 0.8], 1: [0.0, 1.0]})
        q = np.array([0.9, 0.1])
        assert predict_cosine(table, q) == predict_cosine(table, 250.0 * q)
        # rescaling one class sum does not change the argmax either
        scaled = self._table({0: [0.16, 0.08], 1: [0.0, 1.0]})
        assert predict_cosine(scaled, q) == 0

    def test_tie_breaks_to_lowest_label(self):
        table = self._table({4: [1.0, 0.0], 2: [1.0, 0.0]})
        assert predict_cosine(table, np.array([1.0, 0.0])) == 2

    def test_zero_sum_class_never_wins(self):
        table = self._table({0: [0.0, 0.0], 1: [0.5, 0.5]})
        assert predict_cosine(table, np.array([1.0, 1.0])) == 1
        assert predict_cosine(table, np.array([-1.0, -1.0])) == 1  # even at negative sim

    def test_empty_table_errors(self):
        with pytest.raises(EmptyModelError):
            predict_cosine(ClassSumTable.empty(2), np.array([1.0, 0.0]))

    def test_zero_query_rejected(self):
        table = self._table({0: [1.0, 0.0]})
        with pytest.raises(ValueError, match="zero-norm query"):
            predict_cosine(table, np.array([0.0, 0.0]))


class TestPartitionInvariance:
    def test_stream_order_does_not_change_noiseless_sums(self):
        data, universe = synth_mixture(6, 40, 8, 8.0, seed=2)
        policy = LabelPolicy.from_prior(range(universe.size))
        released = ReleasedLabelSpace(frozenset(range(universe.size)), "prior")

        whole = update_sums(ClassSumTable.empty(8), data, released, NOISELESS, seed=0)

        stream = make_stream(data, universe, 3, "disjoint", policy)
        table = ClassSumTable.empty(8)
        for t, task in enumerate(stream.tasks):
            table = update_sums(table, task.data, released, NOISELESS, seed=t)
        for c in range(universe.size):
            assert np.allclose(table.sums[c], whole.sums[c], atol=1e-9)

    def test_dummy_classes_never_predicted_at_zero_noise(self):
        data, universe = synth_mixture(4, 25, 8, 8.0, seed=3)
        inflated = universe.with_dummy_multiplier(10)
        released = ReleasedLabelSpace(frozenset(range(inflated.size)), "prior")
        table = update_sums(ClassSumTable.empty(8), data, released, NOISELESS, seed=0)
        assert len(table) == inflated.size  # memory grows with the release, not samples
        preds = predict_cosine_batch(table, data.vectors.astype(np.float64))
        assert preds.max() < universe.size


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        data, universe = synth_mixture(3, 10, 4, 8.0, seed=1)
        released = ReleasedLabelSpace(frozenset(range(3)), "prior")
        table = update_sums(ClassSumTable.empty(4), data, released, GaussianParams(0.3, 1.0), 0)
        table = ClassSumTable(4, dict(table.sums), 0.3, seen_tasks=1)
        path = tmp_path / "sums.emb1"
        save_table(table, universe, path)
        loaded, loaded_universe = load_table(path)
        assert loaded.seen_tasks == 1
        assert loaded.noise_sigma == 0.3
        assert loaded_universe == universe
        for c in range(3):
            assert np.allclose(loaded.sums[c], table.sums[c], atol=1e-5)  # f32 storage


def test_all_zero_sums_still_yield_a_prediction():
    # the classifier must produce an output even when every stored sum is
    # zero (released-but-never-populated classes); ties fall to the lowest id
    table = ClassSumTable(2, {3: np.zeros(2), 8: np.zeros(2)}, 0.0)
    assert predict_cosine(table, np.array([1.0, 0.0])) == 3
