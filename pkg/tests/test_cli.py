"""CLI surface: run, attack, curve, calibrate, inspect."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from dpcl.cli import main
from dpcl.datasets import EmbeddingDataset, LabelUniverse, save_embeddings


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_curve_brackets_the_99_percent_threshold(capsys):
    code, out = _run(capsys, "curve", "--epsilon", "1.0", "--delta", "1e-7", "--k-max", "14")
    assert code == 0
    rows = [line.split(",") for line in out.strip().splitlines()[1:]]
    bounds = {int(k): float(bound) for _, k, bound in rows}
    assert bounds[12] >= 0.99
    assert bounds[13] < 0.99


def test_calibrate_report(capsys):
    code, out = _run(capsys, "calibrate", "--epsilon", "0.5,1,8", "--delta", "1e-5,1e-7")
    assert code == 0
    rows = [line.split(",") for line in out.strip().splitlines()[1:]]
    assert len(rows) == 6
    for _eps, _delta, sigma, _rec, err, classical in rows:
        assert float(err) <= 1e-9
        assert float(sigma) <= float(classical)


def test_attack_json_reports(capsys):
    code, out = _run(capsys, "attack", "--policy", "data", "--trials", "50")
    assert code == 0
    report = json.loads(out)
    assert report["advantage"] == 1.0
    assert report["non_private_policy"] is True

    code, out = _run(capsys, "attack", "--policy", "prior", "--trials", "50")
    assert json.loads(out)["advantage"] == 0.0


def test_inspect_roundtrip(capsys, tmp_path):
    ds = EmbeddingDataset(
        3,
        np.arange(12, dtype=np.float32).reshape(4, 3),
        np.array([0, 0, 1, 1], dtype=np.int64),
    )
    path = tmp_path / "probe.emb1"
    save_embeddings(ds, LabelUniverse(("x", "y")), path)
    code, out = _run(capsys, "inspect", str(path))
    assert code == 0
    report = json.loads(out)
    assert report["dim"] == 3
    assert report["records"] == 4
    assert report["per_label_counts"] == {"x": 2, "y": 2}


def test_inspect_missing_file_fails_cleanly(tmp_path, capsys):
    with pytest.raises(FileNotFoundError):
        main(["inspect", str(tmp_path / "absent.emb1")])


def test_run_with_config_and_overrides(capsys, tmp_path):
    config = tmp_path / "exp.cfg"
    config.write_text(
        "method = cosine\n"
        "data.classes = 4\n"
        "data.per_class = 30\n"
        "data.dim = 8\n"
        "stream.tasks = 2\n"
        "budget.epsilon = inf\n"
        "repeats = 1\n"
    )
    out_dir = tmp_path / "results"
    code, out = _run(
        capsys,
        "run",
        "--config",
        str(config),
        "--set",
        "seed=9",
        "--output-dir",
        str(out_dir),
    )
    assert code == 0
    assert (out_dir / "results.csv").exists()
    assert "final_avg_acc" in out


def test_run_rejects_unknown_key(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("no.such.key = 1\n")
    code = main(["run", "--config", str(config)])
    assert code == 2
    assert "unknown config key" in capsys.readouterr().err
