import os

import numpy as np
import pytest

from gearfault.config import GenConfig
from gearfault.dataset import Dataset, default_channel_names, default_class_names
from gearfault.synthgen import generate

RUN_SLOW = os.environ.get("GEARFAULT_RUN_SLOW", "").lower() in {"1", "true", "yes"}


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set GEARFAULT_RUN_SLOW=1 to run desk-scale tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_dataset(values, labels, num_classes=None) -> Dataset:
    """Wrap raw arrays in a Dataset with default names."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(values, labels, default_class_names(k), default_channel_names(values.shape[1]))


@pytest.fixture(scope="session")
def small_gen_config():
    return GenConfig(num_classes=5, samples_per_class=20, series_length=64, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_gen_config):
    """100 synthetic samples, 5 classes x 20, 3 channels x 64 points."""
    return generate(small_gen_config)


@pytest.fixture(scope="session")
def two_class_dataset():
    """Trivially separable 2-class data: a slow sine vs. a fast sine, small noise."""
    rng = np.random.default_rng(11)
    t = np.arange(32) / 32.0
    values, labels = [], []
    for i in range(32):
        label = i % 2
        freq = 1.0 if label == 0 else 6.0
        phase = rng.uniform(0, 0.3)
        base = np.sin(2 * np.pi * freq * t + phase)
        values.append(np.stack([base, -base]) + 0.05 * rng.standard_normal((2, 32)))
        labels.append(label)
    return make_dataset(values, labels)
