"""
Exploratory statistics: per-sample channel statistics and class-conditional
mean/variance curves, exported as long-format CSV tables ready for plotting.

All variances are population (1/N) variances.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from .dataset import FLOAT_FORMAT, Dataset
from .errors import ArgumentError
from .fileio import PathLike, atomic_write_text, write_json

logger = logging.getLogger("gearfault.eda")

STATS_COLUMNS = ["entity", "channel", "index", "statistic", "value"]


@dataclass(frozen=True)
class ChannelStats:
    per_sample_mean: np.ndarray
    per_sample_variance: np.ndarray
    per_sample_range: np.ndarray
    channel_names: List[str]


@dataclass(frozen=True)
class ClassStats:
    class_mean_curves: np.ndarray
    class_var_curves: np.ndarray
    class_names: List[str]
    channel_names: List[str]


def channel_stats(dataset: Dataset) -> ChannelStats:
    if len(dataset) == 0:
        raise ArgumentError("channel_stats needs a non-empty dataset")
    values = dataset.values
    return ChannelStats(
        per_sample_mean=values.mean(axis=2),
        per_sample_variance=values.var(axis=2),
        per_sample_range=values.max(axis=2) - values.min(axis=2),
        channel_names=list(dataset.channel_names),
    )


def class_stats(dataset: Dataset) -> ClassStats:
    """Mean and variance across the samples of each class, per channel and time index."""
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    small = [k for k, n in enumerate(counts) if n < 2]
    if small:
        raise ArgumentError(f"class_stats needs >= 2 samples per class; classes {small} have fewer")
    means, variances = [], []
    for k in range(dataset.num_classes):
        block = dataset.values[dataset.labels == k]
        means.append(block.mean(axis=0))
        variances.append(block.var(axis=0))
    return ClassStats(
        class_mean_curves=np.stack(means),
        class_var_curves=np.stack(variances),
        class_names=list(dataset.class_names),
        channel_names=list(dataset.channel_names),
    )


def _long_frame(stats: Union[ChannelStats, ClassStats]) -> pd.DataFrame:
    frames = []
    if isinstance(stats, ChannelStats):
        named = [("mean", stats.per_sample_mean), ("variance", stats.per_sample_variance), ("range", stats.per_sample_range)]
        num_samples = stats.per_sample_mean.shape[0]
        for i in range(num_samples):
            for c, channel in enumerate(stats.channel_names):
                for name, table in named:
                    frames.append(("sample", channel, i, name, float(table[i, c])))
    elif isinstance(stats, ClassStats):
        named = [("mean", stats.class_mean_curves), ("variance", stats.class_var_curves)]
        for k, class_name in enumerate(stats.class_names):
            for c, channel in enumerate(stats.channel_names):
                for name, curves in named:
                    for t, value in enumerate(curves[k, c]):
                        frames.append((class_name, channel, t, name, float(value)))
    else:
        raise ArgumentError(f"cannot export {type(stats).__name__}")
    return pd.DataFrame(frames, columns=STATS_COLUMNS)


def export_stats(stats: Union[ChannelStats, ClassStats], path: PathLike) -> Path:
    """Write ``stats`` as ``entity,channel,index,statistic,value`` rows."""
    frame = _long_frame(stats)
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    target = atomic_write_text(path, buffer.getvalue())
    logger.info("Wrote %d statistic rows to %s", len(frame), target)
    return target


def read_stats(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(
        path,
        dtype={"entity": str, "channel": str, "index": np.int64, "statistic": str},
        float_precision="round_trip",
        keep_default_na=False,
    )


def channel_range_ranking(stats: ChannelStats) -> List[str]:
    """Channel names ordered by mean per-sample range, largest first."""
    mean_range = stats.per_sample_range.mean(axis=0)
    order = np.argsort(-mean_range, kind="stable")
    return [stats.channel_names[c] for c in order]


def class_variance_ranking(stats: ClassStats, channel: Union[int, str]) -> List[int]:
    """Class ids ordered by time-averaged variance curve in ``channel``, largest first."""
    c = stats.channel_names.index(channel) if isinstance(channel, str) else int(channel)
    averaged = stats.class_var_curves[:, c, :].mean(axis=1)
    return [int(k) for k in np.argsort(-averaged, kind="stable")]


def eda_summary(channel: ChannelStats, per_class: ClassStats) -> Dict[str, object]:
    return {
        "variance_convention": "population",
        "channel_range_ranking": channel_range_ranking(channel),
        "class_variance_ranking": {
            name: class_variance_ranking(per_class, name) for name in per_class.channel_names
        },
        "class_names": per_class.class_names,
    }


def write_eda_summary(channel: ChannelStats, per_class: ClassStats, path: PathLike) -> Path:
    return write_json(path, eda_summary(channel, per_class))
