"""
Synthetic planetary-gearbox vibration data.

Each sample is a sum of class-specific gear-mesh harmonics with a random
phase per channel and harmonic, plus zero-mean Gaussian noise whose standard
deviation depends on the class and the channel. The harmonic frequencies and
amplitudes are placeholders: they give the classifiers temporal structure to
learn and are not fitted to any recorded spectrum.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .config import GenConfig
from .dataset import Dataset, default_channel_names, default_class_names
from .fileio import PathLike, write_json

logger = logging.getLogger("gearfault.synthgen")


def _sample_values(config: GenConfig, label: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(config.series_length, dtype=np.float64) / config.sampling_rate_hz
    fundamental = config.base_freqs_hz[label]
    num_harmonics = len(config.harmonic_amps)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(config.num_channels, num_harmonics))
    values = np.zeros((config.num_channels, config.series_length), dtype=np.float64)
    for h, amp in enumerate(config.harmonic_amps):
        omega = 2.0 * np.pi * fundamental * (h + 1)
        values += amp * np.sin(omega * t[None, :] + phases[:, h : h + 1])
    stddev = np.asarray(config.class_channel_stddev[label], dtype=np.float64)
    values += rng.standard_normal((config.num_channels, config.series_length)) * stddev[:, None]
    return values


def generate(config: GenConfig) -> Dataset:
    """Generate ``num_classes * samples_per_class`` samples, class-major.

    Sample ``i`` draws from its own stream seeded by ``(seed, i)`` so the
    output does not depend on generation order.
    """
    n = config.num_classes * config.samples_per_class
    values = np.empty((n, config.num_channels, config.series_length), dtype=np.float64)
    labels = np.repeat(np.arange(config.num_classes, dtype=np.int64), config.samples_per_class)
    for i in range(n):
        rng = np.random.default_rng([config.seed, i])
        values[i] = _sample_values(config, int(labels[i]), rng)
    logger.info(
        "Generated %d samples (%d classes x %d, %d channels x %d points, seed %d)",
        n,
        config.num_classes,
        config.samples_per_class,
        config.num_channels,
        config.series_length,
        config.seed,
    )
    return Dataset(
        values,
        labels,
        default_class_names(config.num_classes),
        default_channel_names(config.num_channels),
        config.sampling_rate_hz,
    )


def sidecar_path(csv_path: PathLike) -> Path:
    return Path(str(csv_path) + ".json")


def write_sidecar(config: GenConfig, csv_path: PathLike) -> Path:
    """Record the full generator config next to the dataset CSV."""
    payload = {
        "generator": "gearfault.synthgen",
        "config": config.model_dump(mode="json"),
        "class_names": default_class_names(config.num_classes),
        "channel_names": default_channel_names(config.num_channels),
        "note": "harmonic frequencies and amplitudes are placeholders, not rig measurements",
    }
    return write_json(sidecar_path(csv_path), payload)
