import json

import numpy as np
import pytest

from gearfault.config import TransformConfig
from gearfault.errors import ArgumentError, DimensionError
from gearfault.minirocket import (
    KERNELS,
    FittedTransform,
    enumerate_kernels,
    fit,
    fit_dilations,
    transform,
)

from tests.conftest import make_dataset


def naive_features(fitted: FittedTransform, values: np.ndarray) -> np.ndarray:
    """Triple-loop convolution + PPV, one feature column at a time."""
    n, _, length = values.shape
    out = np.zeros((n, fitted.num_features))
    for pair, di, k, offset, count in fitted.pairs():
        d = fitted.dilations[di]
        weights = KERNELS.weights[k]
        channels = fitted.channel_subsets[pair]
        if fitted.paddings[pair]:
            positions = range(length)
        else:
            positions = range(4 * d, length - 4 * d)
        for i in range(n):
            conv = []
            for t in positions:
                total = 0.0
                for c in channels:
                    for j in range(9):
                        src = t + (j - 4) * d
                        if 0 <= src < length:
                            total += weights[j] * values[i, c, src]
                conv.append(total)
            conv = np.array(conv)
            for b in range(count):
                out[i, offset + b] = np.mean(conv > fitted.biases[offset + b])
    return out


def test_kernel_set():
    kernels = enumerate_kernels()
    assert len(kernels) == 84
    np.testing.assert_array_equal(kernels.weights[0], [2, 2, 2, -1, -1, -1, -1, -1, -1])
    assert kernels.positions[-1] == (6, 7, 8)
    assert np.all(kernels.weights.sum(axis=1) == 0)
    assert np.all((kernels.weights == 2).sum(axis=1) == 3)


def test_default_feature_count_on_length_200():
    dilations, per_dilation = fit_dilations(200, 9996, 32)
    assert int(per_dilation.sum()) == 119
    assert all(8 * d + 1 <= 200 for d in dilations)
    rng = np.random.default_rng(0)
    ds = make_dataset(rng.standard_normal((3, 3, 200)), [0, 1, 2])
    fitted = fit(ds, TransformConfig())
    assert fitted.num_features == 9996
    features = transform(fitted, ds)
    assert features.shape == (3, 9996)
    assert np.all((features.values >= 0) & (features.values <= 1))


def test_num_features_forced_to_multiple_of_84():
    assert TransformConfig(num_features=10000).num_features == 9996
    assert TransformConfig(num_features=10).num_features == 84


@pytest.mark.parametrize("channels,length,seed", [(1, 16, 0), (2, 24, 1), (3, 32, 2)])
def test_matches_naive_oracle(channels, length, seed):
    rng = np.random.default_rng(seed)
    # small integers keep every partial sum exact
    values = rng.integers(-6, 7, size=(5, channels, length)).astype(float)
    ds = make_dataset(values, [0, 1, 0, 1, 0])
    fitted = fit(ds, TransformConfig(num_features=84 * 6, seed=seed))
    fast = transform(fitted, ds).values
    slow = naive_features(fitted, values)
    assert np.max(np.abs(fast - slow)) <= 1e-12


def test_two_sample_single_channel_oracle():
    values = np.arange(32, dtype=float).reshape(2, 1, 16) % 5
    ds = make_dataset(values, [0, 1])
    fitted = fit(ds, TransformConfig(num_features=168))
    np.testing.assert_array_equal(transform(fitted, ds).values, naive_features(fitted, values))


def test_level_shift_invariance_without_padding():
    rng = np.random.default_rng(3)
    values = rng.integers(-8, 9, size=(4, 3, 40)).astype(float)
    ds = make_dataset(values, [0, 1, 0, 1])
    fitted = fit(ds, TransformConfig(num_features=840, padding="none"))
    shift = np.array([0.5, -3.25, 7.0])[None, :, None]
    np.testing.assert_array_equal(
        transform(fitted, ds).values,
        transform(fitted, ds.replace_values(values + shift)).values,
    )


def test_level_shift_invariance_on_unpadded_columns():
    rng = np.random.default_rng(4)
    values = rng.integers(-8, 9, size=(3, 2, 40)).astype(float)
    ds = make_dataset(values, [0, 1, 0])
    fitted = fit(ds, TransformConfig(num_features=840))
    assert any(fitted.paddings) and not all(fitted.paddings)
    base = transform(fitted, ds).values
    shifted = transform(fitted, ds.replace_values(values + 2.5)).values
    for pair, _, _, offset, count in fitted.pairs():
        if not fitted.paddings[pair]:
            np.testing.assert_array_equal(base[:, offset : offset + count], shifted[:, offset : offset + count])


def test_zero_data():
    ds = make_dataset(np.zeros((2, 3, 30)), [0, 1])
    fitted = fit(ds, TransformConfig(num_features=168))
    assert np.all(fitted.biases == 0.0)
    assert np.all(transform(fitted, ds).values == 0.0)


def test_fit_is_deterministic():
    rng = np.random.default_rng(5)
    ds = make_dataset(rng.standard_normal((6, 3, 50)), [0, 1, 2, 0, 1, 2])
    a = fit(ds, TransformConfig(num_features=840, seed=11))
    b = fit(ds, TransformConfig(num_features=840, seed=11))
    assert a.to_dict() == b.to_dict()
    c = fit(ds, TransformConfig(num_features=840, seed=12))
    assert a.channel_subsets != c.channel_subsets or a.example_indices != c.example_indices


def test_channel_subsets_and_paddings():
    rng = np.random.default_rng(6)
    ds = make_dataset(rng.standard_normal((4, 3, 60)), [0, 1, 0, 1])
    fitted = fit(ds, TransformConfig(num_features=840))
    for subset in fitted.channel_subsets:
        assert 1 <= len(subset) <= 3
        assert list(subset) == sorted(set(subset))
    for pair, di, k, _, _ in fitted.pairs():
        assert fitted.paddings[pair] == ((di + k) % 2 == 0)
    info = fitted.column_info(0)
    assert info["kernel"] == 0 and info["dilation"] == fitted.dilations[0]


def test_serialized_transform_reproduces_features(tmp_path):
    rng = np.random.default_rng(7)
    ds = make_dataset(rng.standard_normal((5, 3, 36)), [0, 1, 0, 1, 1])
    fitted = fit(ds, TransformConfig(num_features=420))
    path = tmp_path / "transform.json"
    path.write_text(json.dumps(fitted.to_dict()), encoding="utf-8")
    again = FittedTransform.from_dict(json.loads(path.read_text(encoding="utf-8")))
    np.testing.assert_array_equal(transform(fitted, ds).values, transform(again, ds).values)
    with pytest.raises(ArgumentError):
        FittedTransform.from_dict({"format": "other"})


def test_threads_do_not_change_results():
    rng = np.random.default_rng(8)
    ds = make_dataset(rng.standard_normal((600, 1, 20)), rng.integers(0, 2, 600), num_classes=2)
    fitted = fit(ds, TransformConfig(num_features=168))
    one = transform(fitted, ds, n_jobs=1)
    many = transform(fitted, ds, n_jobs=3)
    np.testing.assert_array_equal(one.values, many.values)
    np.testing.assert_array_equal(many.source_indices, np.arange(600))


def test_errors():
    with pytest.raises(ArgumentError):
        fit(make_dataset(np.zeros((2, 1, 8)), [0, 1]))
    ds = make_dataset(np.zeros((2, 2, 20)), [0, 1])
    fitted = fit(ds, TransformConfig(num_features=84))
    with pytest.raises(DimensionError):
        transform(fitted, make_dataset(np.zeros((2, 2, 21)), [0, 1]))
    with pytest.raises(DimensionError):
        transform(fitted, make_dataset(np.zeros((2, 3, 20)), [0, 1]))
