import numpy as np
import pytest

from gearfault.ensemble import (
    ProbabilityMatrix,
    combine,
    ensemble_average,
    ensemble_max,
    predict,
    read_probability_csv,
    write_probability_csv,
)
from gearfault.errors import ArgumentError, DimensionError, FormatError


def random_matrix(rng, n=50, k=5, tag="m"):
    raw = rng.uniform(0.01, 1.0, (n, k))
    return ProbabilityMatrix(raw / raw.sum(axis=1, keepdims=True), tag)


def test_worked_two_model_example():
    a = ProbabilityMatrix([[0.6, 0.4]], "a")
    b = ProbabilityMatrix([[0.2, 0.8]], "b")
    avg = ensemble_average([a, b])
    np.testing.assert_allclose(avg.values, [[0.4, 0.6]], rtol=0, atol=1e-15)
    assert predict(avg).tolist() == [1]
    preds, scores = ensemble_max([a, b])
    np.testing.assert_array_equal(scores.values, [[0.6, 0.8]])
    assert preds.tolist() == [1]
    assert not scores.normalized


def test_single_matrix_is_identity():
    mat = random_matrix(np.random.default_rng(0))
    np.testing.assert_array_equal(ensemble_average([mat]).values, mat.values)
    preds, _ = ensemble_max([mat])
    np.testing.assert_array_equal(preds, predict(mat))


def test_average_matches_elementwise_loop():
    rng = np.random.default_rng(1)
    mats = [random_matrix(rng, tag=t) for t in "abc"]
    avg = ensemble_average(mats).values
    for i in range(50):
        for k in range(5):
            brute = (mats[0].values[i, k] + mats[1].values[i, k] + mats[2].values[i, k]) / 3
            assert abs(avg[i, k] - brute) <= 1e-12
    assert np.max(np.abs(avg.sum(axis=1) - 1.0)) <= 1e-6


def test_agreeing_models_decide_both_rules():
    rng = np.random.default_rng(2)
    n, k = 1000, 5
    winners = rng.integers(0, k, n)
    mats = []
    for tag in "abc":
        raw = rng.uniform(0.0, 1.0, (n, k))
        raw[np.arange(n), winners] = raw.max(axis=1) + 0.1
        mats.append(ProbabilityMatrix(raw / raw.sum(axis=1, keepdims=True), tag))
    np.testing.assert_array_equal(predict(ensemble_average(mats)), winners)
    np.testing.assert_array_equal(ensemble_max(mats)[0], winners)


def test_idempotence_and_order_invariance():
    rng = np.random.default_rng(3)
    mat = random_matrix(rng)
    copies = [mat] * 4
    np.testing.assert_array_equal(predict(ensemble_average(copies)), predict(mat))
    np.testing.assert_array_equal(ensemble_max(copies)[0], predict(mat))

    mats = [random_matrix(rng, tag=t) for t in "abc"]
    shuffled = [mats[2], mats[0], mats[1]]
    np.testing.assert_allclose(ensemble_average(mats).values, ensemble_average(shuffled).values, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(ensemble_max(mats)[1].values, ensemble_max(shuffled)[1].values)


def test_common_row_scaling_keeps_predictions():
    rng = np.random.default_rng(4)
    mats = [random_matrix(rng, tag=t) for t in "ab"]
    scale = rng.uniform(0.1, 1.0, (50, 1))
    scaled = [ProbabilityMatrix(m.values * scale, m.model_tag, normalized=False) for m in mats]
    np.testing.assert_array_equal(ensemble_max(mats)[0], ensemble_max(scaled)[0])
    averaged = np.mean([m.values for m in scaled], axis=0)
    np.testing.assert_array_equal(averaged.argmax(axis=1), predict(ensemble_average(mats)))


def test_predict_tie_break_and_permutation():
    assert predict(ProbabilityMatrix(np.full((2, 4), 0.25), "u")).tolist() == [0, 0]
    assert predict(ProbabilityMatrix(np.eye(3)[[2, 0, 1]], "h")).tolist() == [2, 0, 1]
    mat = random_matrix(np.random.default_rng(5))
    perm = np.array([3, 0, 4, 1, 2])
    permuted = ProbabilityMatrix(mat.values[:, perm], "p")
    np.testing.assert_array_equal(perm[predict(permuted)], predict(mat))


def test_matrix_validation():
    with pytest.raises(ArgumentError):
        ProbabilityMatrix([[0.7, 0.7]], "bad")
    with pytest.raises(ArgumentError):
        ProbabilityMatrix([[1.5, -0.5]], "bad")
    with pytest.raises(DimensionError):
        ProbabilityMatrix([[0.5, 0.5]], "bad", sample_indices=[0, 1])
    assert ProbabilityMatrix([[1.5, 0.2]], "scores", normalized=False).num_classes == 2


def test_misaligned_inputs_rejected():
    rng = np.random.default_rng(6)
    a = random_matrix(rng, n=10, k=5)
    with pytest.raises(DimensionError):
        ensemble_average([a, random_matrix(rng, n=10, k=4)])
    with pytest.raises(DimensionError):
        ensemble_max([a, random_matrix(rng, n=9, k=5)])
    moved = ProbabilityMatrix(a.values, "moved", sample_indices=np.arange(10) + 1)
    with pytest.raises(DimensionError):
        ensemble_average([a, moved])
    with pytest.raises(ArgumentError):
        ensemble_average([])
    with pytest.raises(ArgumentError):
        combine([a], "median")


def test_labels_carried_from_any_input():
    a = ProbabilityMatrix([[0.5, 0.5], [0.1, 0.9]], "a")
    b = ProbabilityMatrix([[0.9, 0.1], [0.3, 0.7]], "b", true_labels=[0, 1])
    assert combine([a, b], "average").true_labels.tolist() == [0, 1]
    assert combine([a, b], "max").true_labels.tolist() == [0, 1]


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    raw = rng.uniform(0.01, 1.0, (12, 3))
    mat = ProbabilityMatrix(
        raw / raw.sum(axis=1, keepdims=True),
        "lstmfcn",
        sample_indices=np.arange(40, 52),
        true_labels=rng.integers(0, 3, 12),
    )
    path = write_probability_csv(mat, tmp_path / "probs_lstmfcn_fold0.csv")
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "sample_index,p_0,p_1,p_2,pred,true"
    again = read_probability_csv(path)
    assert again.model_tag == "probs_lstmfcn_fold0"
    np.testing.assert_array_equal(again.values, mat.values)
    np.testing.assert_array_equal(again.sample_indices, mat.sample_indices)
    np.testing.assert_array_equal(again.true_labels, mat.true_labels)

    _, scores = ensemble_max([mat, mat])
    score_path = write_probability_csv(scores, tmp_path / "scores.csv")
    assert score_path.read_text(encoding="utf-8").startswith("sample_index,s_0")
    assert not read_probability_csv(score_path).normalized


def test_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_probability_csv(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_probability_csv(bad)
