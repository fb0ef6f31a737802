import json

import numpy as np
import pytest

from gearfault.config import RunConfig
from gearfault.dataset import Fold, SplitPlan, make_split_plan
from gearfault.ensemble import ProbabilityMatrix, write_probability_csv
from gearfault.errors import ArgumentError, DimensionError, TrainingError
from gearfault.evaluation import (
    AXIS_CONVENTION,
    CVSummary,
    DeepMethod,
    FoldMethod,
    FoldOutcome,
    FoldReport,
    accuracy_percent,
    confusion_matrix,
    confusions_of,
    ensemble_reports,
    load_reports,
    make_method,
    probability_path,
    read_summary_csv,
    render_report,
    render_report_pdf,
    report_path,
    run_cv,
    run_fold,
    summarize,
)

from tests.conftest import make_dataset

FOLD_ACCURACIES = [98.50, 98.56, 98.59, 98.44, 98.51]


def one_hot(labels, k):
    return np.eye(k)[np.asarray(labels)]


class PerfectMethod(FoldMethod):
    """Predicts the true test labels and records what each fold saw."""

    name = "perfect"

    def __init__(self):
        self.seen = []

    def fit_predict(self, train_set, val_set, test_set, fold_index):
        self.seen.append(
            (fold_index, train_set.source_indices.copy(), val_set.source_indices.copy(), test_set.source_indices.copy())
        )
        probs = ProbabilityMatrix(
            one_hot(test_set.labels, test_set.num_classes), self.name, test_set.source_indices, test_set.labels
        )
        return FoldOutcome(probs, train_seconds=1.5, seed="0")


class ConstantMethod(FoldMethod):
    """Always predicts class 0."""

    name = "constant"

    def fit_predict(self, train_set, val_set, test_set, fold_index):
        values = one_hot(np.zeros(len(test_set), dtype=int), test_set.num_classes)
        return FoldOutcome(ProbabilityMatrix(values, self.name, test_set.source_indices, test_set.labels), 0.0)


class DivergingMethod(FoldMethod):
    name = "diverging"

    def fit_predict(self, train_set, val_set, test_set, fold_index):
        raise TrainingError("loss became nan in epoch 2", epoch=2)


def report(method, fold, acc, seconds=1.0):
    return FoldReport(fold, method, acc, np.eye(2, dtype=np.int64), seconds)


@pytest.fixture
def balanced():
    labels = np.repeat(np.arange(5), 20)
    values = np.random.default_rng(0).standard_normal((100, 3, 16))
    return make_dataset(values, labels)


def test_confusion_matrix_axes():
    cm = confusion_matrix([0, 0, 1, 2], [1, 0, 1, 1], 3)
    assert cm[1, 0] == 1  # predicted 1, true 0
    assert cm[0, 0] == 1
    assert cm[1, 1] == 1
    assert cm[1, 2] == 1
    assert cm.sum() == 4
    np.testing.assert_array_equal(cm.sum(axis=0), [2, 1, 1])
    np.testing.assert_array_equal(cm.sum(axis=1), [1, 3, 0])
    assert accuracy_percent(cm) == 50.0


def test_confusion_matrix_errors():
    with pytest.raises(DimensionError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ArgumentError):
        confusion_matrix([0, 2], [0, 1], 2)
    with pytest.raises(ArgumentError):
        accuracy_percent(np.zeros((2, 2), dtype=int))


def test_summarize_five_folds():
    summary = summarize([report("msresnet", k, a) for k, a in enumerate(FOLD_ACCURACIES)])
    assert summary.mean == pytest.approx(98.52, abs=1e-9)
    assert abs(summary.std - 0.058) <= 0.001
    brute_mean = sum(FOLD_ACCURACIES) / 5
    brute_std = (sum((a - brute_mean) ** 2 for a in FOLD_ACCURACIES) / 4) ** 0.5
    assert summary.std == pytest.approx(brute_std, rel=1e-9)
    assert summary.std_convention == "sample"
    assert summary.mean_seconds == 1.0


def test_summarize_simple_cases():
    assert summarize([report("m", 0, 97.0)]).std == 0.0
    same = summarize([report("m", k, 100.0) for k in range(5)])
    assert same.mean == 100.0 and same.std == 0.0
    shuffled = summarize([report("m", 2, 3.0), report("m", 0, 1.0), report("m", 1, 2.0)])
    assert shuffled.accuracies == [1.0, 2.0, 3.0]
    with pytest.raises(ArgumentError):
        summarize([report("a", 0, 1.0), report("b", 1, 1.0)])
    with pytest.raises(ArgumentError):
        summarize([])


def test_fold_report_round_trip(tmp_path):
    original = FoldReport(3, "lstmfcn", 96.25, np.array([[5, 1], [0, 4]]), 12.5, seed="3", config_hash="abc")
    again = FoldReport.load(original.save(tmp_path / "r.json"))
    assert again.to_dict() == original.to_dict()
    assert again.test_size == 10
    assert json.loads((tmp_path / "r.json").read_text(encoding="utf-8"))["axis_convention"] == AXIS_CONVENTION


def test_run_cv_never_leaks_test_samples(balanced):
    plan = make_split_plan(balanced, 5, (0.7, 0.1, 0.2), seed=1)
    method = PerfectMethod()
    reports = run_cv(balanced, method, plan)
    assert [r.fold_index for r in reports] == [0, 1, 2, 3, 4]
    tested = []
    for _, train_ix, val_ix, test_ix in method.seen:
        assert not set(test_ix) & set(train_ix)
        assert not set(test_ix) & set(val_ix)
        assert not set(train_ix) & set(val_ix)
        tested.extend(test_ix.tolist())
    assert sorted(tested) == list(range(100))
    for r in reports:
        assert r.accuracy_percent == 100.0
        assert np.count_nonzero(r.confusion - np.diag(np.diag(r.confusion))) == 0
        assert r.test_size == 20


def test_run_fold_rejects_overlapping_splits(balanced):
    plan = make_split_plan(balanced, 5, (0.7, 0.1, 0.2), seed=1)
    fold = plan.folds[0]
    leaky = Fold(fold.train, fold.val, np.concatenate([fold.test[:-1], fold.train[:1]]))
    bad_plan = SplitPlan([leaky], plan.seed, plan.fractions, plan.stratified, plan.num_samples)
    method = PerfectMethod()
    with pytest.raises(ArgumentError, match="train and test"):
        run_fold(balanced, method, bad_plan, 0)
    assert method.seen == []


def test_constant_predictor_on_balanced_folds(balanced):
    plan = make_split_plan(balanced, 5, (0.7, 0.1, 0.2), seed=2, stratified=True)
    reports = run_cv(balanced, ConstantMethod(), plan)
    assert [r.accuracy_percent for r in reports] == [20.0] * 5
    assert all(r.confusion[0].sum() == 20 for r in reports)


def test_run_fold_checks_inputs(balanced):
    plan = make_split_plan(balanced, 5, (0.7, 0.1, 0.2), seed=0)
    with pytest.raises(ArgumentError):
        run_fold(balanced.subset(range(50)), PerfectMethod(), plan, 0)
    with pytest.raises(ArgumentError):
        run_fold(balanced, PerfectMethod(), plan, 5)
    with pytest.raises(ArgumentError):
        make_method("svm", RunConfig())


def test_training_errors_name_the_fold(balanced):
    plan = make_split_plan(balanced, 5, (0.7, 0.1, 0.2), seed=0)
    with pytest.raises(TrainingError) as info:
        run_fold(balanced, DivergingMethod(), plan, 3)
    assert info.value.fold == 3
    assert info.value.epoch == 2
    assert "fold 3" in str(info.value)


def test_deep_method_rejects_class_count_mismatch(balanced):
    config = RunConfig.model_validate({"lstmfcn": {"num_classes": 3}})
    with pytest.raises(ArgumentError):
        DeepMethod("lstmfcn", config).build(balanced, 0)
    with pytest.raises(ArgumentError):
        DeepMethod("resnet", config)


def test_minirocket_fold_writes_artifacts(small_dataset, tmp_path):
    config = RunConfig.model_validate({"minirocket": {"num_features": 168}})
    plan = make_split_plan(small_dataset, 5, (0.7, 0.1, 0.2), seed=0)
    first = run_fold(small_dataset, "minirocket", plan, 1, config, out_dir=tmp_path)
    assert first.method == "minirocket"
    assert first.test_size == 20
    assert probability_path(tmp_path, "minirocket", 1).exists()
    assert report_path(tmp_path, "minirocket", 1).exists()
    assert (tmp_path / "model_minirocket_fold1.transform.json").exists()
    assert (tmp_path / "model_minirocket_fold1.ridge.json").exists()

    again = run_fold(small_dataset, "minirocket", plan, 1, config)
    np.testing.assert_array_equal(again.confusion, first.confusion)
    assert again.config_hash == first.config_hash


def write_fold_probs(tmp_path, name, fold, values, labels):
    mat = ProbabilityMatrix(np.asarray(values, dtype=float), name, true_labels=labels)
    return write_probability_csv(mat, probability_path(tmp_path, name, fold))


def test_ensemble_reports_from_files(tmp_path):
    labels = [1, 0, 1]
    a = write_fold_probs(tmp_path, "a", 2, [[0.6, 0.4], [0.7, 0.3], [0.45, 0.55]], labels)
    b = write_fold_probs(tmp_path, "b", 2, [[0.2, 0.8], [0.4, 0.6], [0.9, 0.1]], labels)
    out = tmp_path / "out"
    average = ensemble_reports([[a, b]], "average", member_seconds=[7.0], out_dir=out, fold_indices=[2])[0]
    assert average.method == "ensemble_average"
    assert average.fold_index == 2
    assert average.train_seconds == 7.0
    # averages [0.4,0.6] [0.55,0.45] [0.675,0.325] -> 1, 0, 0
    assert average.accuracy_percent == pytest.approx(200.0 / 3)
    maximum = ensemble_reports([[a, b]], "max", fold_indices=[2])[0]
    # maxima [0.6,0.8] [0.7,0.6] [0.9,0.55] -> 1, 0, 0
    assert maximum.accuracy_percent == pytest.approx(200.0 / 3)
    assert report_path(out, "ensemble_average", 2).exists()
    assert probability_path(out, "ensemble_average", 2).exists()
    with pytest.raises(ArgumentError):
        ensemble_reports([[a, b]], "average", fold_indices=[0, 1])


def test_ensemble_reports_need_labels(tmp_path):
    path = write_probability_csv(ProbabilityMatrix([[0.5, 0.5]], "x"), tmp_path / "probs_x_fold0.csv")
    with pytest.raises(ArgumentError):
        ensemble_reports([[path]], "average")


def test_load_reports_groups_by_method(tmp_path):
    for k in (1, 0):
        report("msresnet", k, 90.0 + k).save(report_path(tmp_path, "msresnet", k))
    report("minirocket", 0, 95.0).save(report_path(tmp_path, "minirocket", 0))
    grouped = load_reports(tmp_path)
    assert sorted(grouped) == ["minirocket", "msresnet"]
    assert [r.fold_index for r in grouped["msresnet"]] == [0, 1]


def sample_summaries():
    deep = summarize([report("msresnet", k, a, seconds=20.0 + k) for k, a in enumerate(FOLD_ACCURACIES)])
    ens = CVSummary("ensemble_average", [99.0, 99.5], 99.25, 0.3535533905932738, 0.0)
    return [deep, ens]


def test_render_report_is_stable_and_parses_back(tmp_path):
    summaries = sample_summaries()
    confusions = confusions_of([report("msresnet", 0, 50.0), report("msresnet", 1, 50.0)])
    first = render_report(summaries, confusions, tmp_path / "a")
    second = render_report(summaries, confusions, tmp_path / "b")
    assert [p.name for p in first] == ["summary.csv", "summary.md", "confusion_msresnet_0.csv", "confusion_msresnet_1.csv"]
    for x, y in zip(first, second):
        assert x.read_bytes() == y.read_bytes()

    table = read_summary_csv(tmp_path / "a" / "summary.csv")
    assert list(table.columns) == ["method"] + [f"fold_{k}" for k in range(5)] + ["mean", "std", "mean_seconds"]
    row = table[table.method == "msresnet"].iloc[0]
    assert row["std"] == summaries[0].std
    assert [row[f"fold_{k}"] for k in range(5)] == FOLD_ACCURACIES
    assert np.isnan(table[table.method == "ensemble_average"].iloc[0]["fold_4"])

    markdown = (tmp_path / "a" / "summary.md").read_text(encoding="utf-8")
    assert "| msresnet | 98.520 ± 0.058 | 22.0 |" in markdown
    assert "| ensemble_average | 99.250 ± 0.354 | - |" in markdown
    assert AXIS_CONVENTION in markdown

    confusion = (tmp_path / "a" / "confusion_msresnet_0.csv").read_text(encoding="utf-8")
    assert confusion.splitlines() == ["pred,true_0,true_1", "0,1,0", "1,0,1"]


def test_render_report_pdf_is_deterministic(tmp_path):
    summaries = sample_summaries()
    a = render_report_pdf(summaries, tmp_path / "a.pdf").read_bytes()
    b = render_report_pdf(summaries, tmp_path / "b.pdf").read_bytes()
    assert a.startswith(b"%PDF")
    assert a == b
