"""
MiniRocket feature transform for multichannel series.

84 fixed length-9 kernels (three taps weighted 2, six weighted -1) are
applied at exponentially spaced dilations. Each (dilation, kernel) pair sums
its convolution over a random channel subset and pools the result by PPV
(proportion of positions strictly above a bias) at several biases taken as
quantiles of the convolution of one random training example.

Feature columns are ordered dilation-major, then kernel, then bias.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import NUM_KERNELS, TransformConfig
from .dataset import Dataset
from .errors import ArgumentError, DimensionError

logger = logging.getLogger("gearfault.minirocket")

KERNEL_LENGTH = 9
FORMAT_TAG = "gearfault.minirocket"
FORMAT_VERSION = 1
CHUNK_SIZE = 256


@dataclass(frozen=True)
class KernelSet:
    positions: List[Tuple[int, int, int]]
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)


def enumerate_kernels() -> KernelSet:
    """All C(9,3) kernels in lexicographic order of their weight-2 positions."""
    positions = list(itertools.combinations(range(KERNEL_LENGTH), 3))
    weights = np.full((len(positions), KERNEL_LENGTH), -1.0)
    for k, chosen in enumerate(positions):
        weights[k, list(chosen)] = 2.0
    weights.setflags(write=False)
    return KernelSet(positions, weights)


KERNELS = enumerate_kernels()


def fit_dilations(input_length: int, num_features: int, max_dilations_per_kernel: int) -> Tuple[np.ndarray, np.ndarray]:
    """Exponentially spaced dilations and the number of biases each one gets.

    Per kernel ``num_features // 84`` features are shared out over the
    dilations; the largest dilation keeps ``8 * d + 1 <= input_length``.
    """
    if input_length < KERNEL_LENGTH:
        raise ArgumentError(f"series_length must be >= {KERNEL_LENGTH}, got {input_length}")
    per_kernel = num_features // NUM_KERNELS
    if per_kernel < 1:
        raise ArgumentError(f"num_features must be >= {NUM_KERNELS}, got {num_features}")
    true_max = min(per_kernel, max_dilations_per_kernel)
    multiplier = per_kernel / true_max
    max_exponent = np.log2((input_length - 1) / (KERNEL_LENGTH - 1))
    dilations, counts = np.unique(
        np.logspace(0, max_exponent, true_max, base=2).astype(np.int64), return_counts=True
    )
    per_dilation = (counts * multiplier).astype(np.int64)
    remainder = per_kernel - int(per_dilation.sum())
    i = 0
    while remainder > 0:
        per_dilation[i] += 1
        remainder -= 1
        i = (i + 1) % len(per_dilation)
    return dilations, per_dilation


def _quantile_levels(count: int) -> np.ndarray:
    return (np.arange(count) + 1.0) / (count + 1.0)


def _channel_convolutions(block: np.ndarray, dilation: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel building blocks of all 84 convolutions at one dilation.

    Returns ``alpha`` = -sum of the nine shifted taps and ``gamma`` = 3 x each
    shifted tap, both zero padded to "same" length. A kernel with weight-2
    taps (a, b, c) then convolves to ``alpha + gamma[a] + gamma[b] + gamma[c]``.
    """
    pad = (KERNEL_LENGTH - 1) * dilation // 2
    length = block.shape[-1]
    padded = np.pad(block, ((0, 0), (0, 0), (pad, pad)))
    taps = [padded[:, :, j * dilation : j * dilation + length] for j in range(KERNEL_LENGTH)]
    alpha = -taps[0]
    for tap in taps[1:]:
        alpha = alpha - tap
    gamma = np.stack([3.0 * tap for tap in taps])
    return alpha, gamma


def _pair_output(
    alpha: np.ndarray, gamma: np.ndarray, kernel: int, channels: Sequence[int], padded: bool, dilation: int
) -> np.ndarray:
    a, b, c = KERNELS.positions[kernel]
    out = None
    for ch in channels:
        conv = alpha[:, ch] + gamma[a][:, ch] + gamma[b][:, ch] + gamma[c][:, ch]
        out = conv if out is None else out + conv
    if not padded:
        pad = (KERNEL_LENGTH - 1) * dilation // 2
        out = out[:, pad : out.shape[1] - pad]
    return out


@dataclass
class FittedTransform:
    """Everything needed to reproduce the transform on new data."""

    dilations: List[int]
    features_per_dilation: List[int]
    biases: np.ndarray
    channel_subsets: List[Tuple[int, ...]]
    paddings: List[bool]
    example_indices: List[int]
    input_length: int
    num_channels: int
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_features(self) -> int:
        return int(self.biases.shape[0])

    def pairs(self):
        """Yield ``(pair_index, dilation_index, kernel, bias_offset, bias_count)``."""
        offset = 0
        pair = 0
        for di, count in enumerate(self.features_per_dilation):
            for k in range(NUM_KERNELS):
                yield pair, di, k, offset, count
                offset += count
                pair += 1

    def column_info(self, column: int) -> Dict[str, Any]:
        for pair, di, k, offset, count in self.pairs():
            if offset <= column < offset + count:
                return {
                    "kernel": k,
                    "dilation": self.dilations[di],
                    "bias": float(self.biases[column]),
                    "channels": list(self.channel_subsets[pair]),
                    "padding": self.paddings[pair],
                }
        raise IndexError(f"column {column} out of range for {self.num_features} features")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "dilations": list(self.dilations),
            "features_per_dilation": list(self.features_per_dilation),
            "biases": self.biases.tolist(),
            "channel_subsets": [list(s) for s in self.channel_subsets],
            "paddings": list(self.paddings),
            "example_indices": list(self.example_indices),
            "input_length": self.input_length,
            "num_channels": self.num_channels,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FittedTransform":
        if data.get("format") != FORMAT_TAG or data.get("version") != FORMAT_VERSION:
            raise ArgumentError(f"not a {FORMAT_TAG} v{FORMAT_VERSION} document")
        return cls(
            dilations=[int(d) for d in data["dilations"]],
            features_per_dilation=[int(n) for n in data["features_per_dilation"]],
            biases=np.asarray(data["biases"], dtype=np.float64),
            channel_subsets=[tuple(int(c) for c in s) for s in data["channel_subsets"]],
            paddings=[bool(p) for p in data["paddings"]],
            example_indices=[int(i) for i in data["example_indices"]],
            input_length=int(data["input_length"]),
            num_channels=int(data["num_channels"]),
            config=dict(data.get("config", {})),
        )


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    source_indices: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def fit(dataset: Dataset, config: Optional[TransformConfig] = None) -> FittedTransform:
    """Choose dilations, channel subsets, paddings and biases from ``dataset``."""
    config = config or TransformConfig()
    if len(dataset) == 0:
        raise ArgumentError("cannot fit MiniRocket on an empty dataset")
    x = dataset.values
    n, num_channels, length = x.shape
    dilations, per_dilation = fit_dilations(length, config.num_features, config.max_dilations_per_kernel)
    rng = np.random.default_rng(config.seed)

    subsets: List[Tuple[int, ...]] = []
    paddings: List[bool] = []
    examples: List[int] = []
    biases = np.empty(int(per_dilation.sum()) * NUM_KERNELS, dtype=np.float64)
    offset = 0
    for di, dilation in enumerate(dilations):
        for k in range(NUM_KERNELS):
            size = int(rng.integers(1, num_channels + 1))
            subset = tuple(sorted(int(c) for c in rng.choice(num_channels, size=size, replace=False)))
            example = int(rng.integers(n))
            padded = config.padding == "alternate" and (di + k) % 2 == 0
            subsets.append(subset)
            paddings.append(padded)
            examples.append(example)
            count = int(per_dilation[di])
            alpha, gamma = _channel_convolutions(x[example : example + 1], int(dilation))
            out = _pair_output(alpha, gamma, k, subset, padded, int(dilation))[0]
            biases[offset : offset + count] = np.quantile(out, _quantile_levels(count))
            offset += count

    fitted = FittedTransform(
        dilations=[int(d) for d in dilations],
        features_per_dilation=[int(c) for c in per_dilation],
        biases=biases,
        channel_subsets=subsets,
        paddings=paddings,
        example_indices=examples,
        input_length=length,
        num_channels=num_channels,
        config=config.model_dump(mode="json"),
    )
    logger.info(
        "Fitted MiniRocket: %d features, %d dilations (max %d) on %d samples",
        fitted.num_features,
        len(dilations),
        int(dilations[-1]),
        n,
    )
    return fitted


def _transform_block(fitted: FittedTransform, block: np.ndarray) -> np.ndarray:
    features = np.empty((block.shape[0], fitted.num_features), dtype=np.float64)
    cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    for pair, di, k, offset, count in fitted.pairs():
        dilation = fitted.dilations[di]
        if di not in cache:
            cache.clear()
            cache[di] = _channel_convolutions(block, dilation)
        alpha, gamma = cache[di]
        out = _pair_output(alpha, gamma, k, fitted.channel_subsets[pair], fitted.paddings[pair], dilation)
        bias = fitted.biases[offset : offset + count]
        features[:, offset : offset + count] = (out[:, :, None] > bias[None, None, :]).mean(axis=1)
    return features


def transform(fitted: FittedTransform, dataset: Dataset, n_jobs: int = 1) -> FeatureMatrix:
    """PPV features of every sample in ``dataset``.

    Samples are processed in independent chunks; with ``n_jobs > 1`` the
    chunks run on a thread pool and write disjoint rows.
    """
    x = dataset.values
    if x.shape[1] != fitted.num_channels or x.shape[2] != fitted.input_length:
        raise DimensionError(
            f"transform fitted on {fitted.num_channels} channels x {fitted.input_length} points, "
            f"got {x.shape[1]} x {x.shape[2]}"
        )
    n = x.shape[0]
    out = np.empty((n, fitted.num_features), dtype=np.float64)
    starts = list(range(0, n, CHUNK_SIZE))

    def run(start: int) -> None:
        out[start : start + CHUNK_SIZE] = _transform_block(fitted, x[start : start + CHUNK_SIZE])

    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)
    logger.debug("Transformed %d samples into %d features", n, fitted.num_features)
    return FeatureMatrix(out, np.array(dataset.source_indices))
