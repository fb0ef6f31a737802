"""
Pipeline runs: generate, cross-validate all three methods, report. A small
config checks the wiring; the committed configuration.json checks accuracy
and that a repeated run reproduces every fold bit for bit.

Skipped unless GEARFAULT_RUN_SLOW=1.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from gearfault.cli import main
from gearfault.evaluation import load_reports

CONFIG = {
    "minirocket": {"n_jobs": 2},
    "train": {"batch_size": 32, "scheduler_patience": 3},
    "msresnet": {
        "input_length": 256,
        "stem_filters": 16,
        "branch_widths": [16, 16, 16],
        "branch_out_dim": 16,
        "concat_dim": 48,
        "epochs": 8,
    },
    "lstmfcn": {"conv_filters": [16, 32, 16], "epochs": 8},
}


@pytest.mark.slow
def test_full_pipeline(tmp_path):
    data = tmp_path / "data.csv"
    config = tmp_path / "config.json"
    config.write_text(json.dumps(CONFIG), encoding="utf-8")
    runs = tmp_path / "runs"
    common = ["--config", str(config), "--seed", "0"]

    assert main(["gen", "-o", str(data), "--per-class", "60", *common]) == 0
    assert main(["eda", "--data", str(data), "--out", str(tmp_path / "eda"), *common]) == 0
    for model in ("minirocket", "msresnet", "lstmfcn"):
        assert main(["train", "--model", model, "--data", str(data), "--out", str(runs), *common]) == 0
    assert main(["report", "--runs", str(runs), "--out", str(tmp_path / "report"), "--pdf", *common]) == 0

    summary = {s["method"]: s for s in json.loads((tmp_path / "report" / "summary.json").read_text(encoding="utf-8"))}
    assert set(summary) == {"msresnet", "lstmfcn", "minirocket", "ensemble_average", "ensemble_max"}
    assert summary["minirocket"]["mean"] > 80.0
    for s in summary.values():
        assert len(s["accuracies"]) == 5
        assert 0.0 <= s["mean"] <= 100.0


REPO_CONFIG = Path(__file__).resolve().parent.parent / "configuration.json"
DEEP_AND_ROCKET = ("minirocket", "msresnet", "lstmfcn")


def _train_all(data, runs):
    for model in DEEP_AND_ROCKET:
        argv = ["train", "--model", model, "--data", str(data), "--out", str(runs), "--config", str(REPO_CONFIG)]
        assert main(argv) == 0


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """The committed configuration: 5 classes x 400 windows, 3 channels x 200 points."""
    root = tmp_path_factory.mktemp("desk")
    data = root / "data.csv"
    assert main(["gen", "-o", str(data), "--config", str(REPO_CONFIG)]) == 0
    _train_all(data, root / "runs")
    report = root / "report"
    assert main(["report", "--runs", str(root / "runs"), "--out", str(report), "--config", str(REPO_CONFIG)]) == 0
    return root


@pytest.mark.slow
def test_desk_scale_accuracy(desk_run):
    summaries = json.loads((desk_run / "report" / "summary.json").read_text(encoding="utf-8"))
    mean = {s["method"]: s["mean"] for s in summaries}
    assert len(load_reports(desk_run / "runs")["minirocket"][0].confusion) == 5
    for method in DEEP_AND_ROCKET:
        assert mean[method] >= 90.0, f"{method}: {mean[method]:.3f}"
    best = max(mean[m] for m in DEEP_AND_ROCKET)
    assert mean["ensemble_average"] >= best - 0.5


@pytest.mark.slow
def test_desk_scale_run_is_deterministic(desk_run):
    repeat = desk_run / "runs_repeat"
    _train_all(desk_run / "data.csv", repeat)
    first, second = load_reports(desk_run / "runs"), load_reports(repeat)
    assert sorted(first) == sorted(second)
    for method in first:
        assert [r.fold_index for r in first[method]] == [r.fold_index for r in second[method]]
        for a, b in zip(first[method], second[method]):
            assert a.accuracy_percent == b.accuracy_percent, f"{method} fold {a.fold_index}"
            assert np.array_equal(a.confusion, b.confusion), f"{method} fold {a.fold_index}"
