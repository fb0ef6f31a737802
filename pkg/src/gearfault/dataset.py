"""
Labeled multichannel time series: data model, CSV format, resampling,
augmentation and cross-validation fold planning.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ArgumentError, DimensionError, FormatError, ParseError
from .fileio import PathLike, atomic_write_text

logger = logging.getLogger("gearfault.dataset")

FAULT_CLASS_NAMES = ["normal", "crack", "surface_wear", "chipped", "tooth_missing"]
XYZ = ["x", "y", "z"]
FLOAT_FORMAT = "%.17g"
FRACTION_TOL = 1e-9


def default_channel_names(num_channels: int) -> List[str]:
    return list(XYZ) if num_channels == 3 else [f"ch{c}" for c in range(num_channels)]


def default_class_names(num_classes: int) -> List[str]:
    if num_classes == len(FAULT_CLASS_NAMES):
        return list(FAULT_CLASS_NAMES)
    return [f"class_{k}" for k in range(num_classes)]


@dataclass(frozen=True)
class Sample:
    """One fixed-length multichannel window and its class id."""

    values: np.ndarray
    label: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"sample values must be (num_channels, series_length), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ArgumentError("sample values must be finite")
        if int(self.label) < 0:
            raise ArgumentError(f"label must be non-negative, got {self.label}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "label", int(self.label))

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]

    @property
    def series_length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of equal-length samples.

    Values are held as one ``(num_samples, num_channels, series_length)``
    float64 array. ``source_indices`` maps each row back to its position in
    the dataset it was cut from (identity for freshly loaded data).
    """

    values: np.ndarray
    labels: np.ndarray
    class_names: List[str]
    channel_names: List[str]
    sampling_rate_hz: float = 10000.0
    source_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if values.ndim != 3:
            raise DimensionError(f"dataset values must be 3-D, got shape {values.shape}")
        if labels.shape != (values.shape[0],):
            raise DimensionError(f"{labels.shape[0]} labels for {values.shape[0]} samples")
        if not np.all(np.isfinite(values)):
            raise ArgumentError("dataset values must be finite")
        if len(self.channel_names) != values.shape[1]:
            raise DimensionError(
                f"{len(self.channel_names)} channel names for {values.shape[1]} channels"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ArgumentError(
                f"labels must lie in [0, {len(self.class_names)}), got range [{labels.min()}, {labels.max()}]"
            )
        if self.sampling_rate_hz <= 0:
            raise ArgumentError("sampling_rate_hz must be positive")
        indices = (
            np.arange(values.shape[0], dtype=np.int64)
            if self.source_indices is None
            else np.asarray(self.source_indices, dtype=np.int64)
        )
        if indices.shape != labels.shape:
            raise DimensionError("source_indices must have one entry per sample")
        for arr in (values, labels, indices):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "source_indices", indices)
        object.__setattr__(self, "class_names", list(self.class_names))
        object.__setattr__(self, "channel_names", list(self.channel_names))

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[Sample],
        class_names: Sequence[str],
        channel_names: Optional[Sequence[str]] = None,
        sampling_rate_hz: float = 10000.0,
    ) -> "Dataset":
        if not samples:
            raise ArgumentError("cannot build a dataset from zero samples")
        lengths = {s.series_length for s in samples}
        if len(lengths) != 1:
            raise DimensionError(f"samples have differing series lengths {sorted(lengths)}")
        values = np.stack([s.values for s in samples])
        labels = np.array([s.label for s in samples], dtype=np.int64)
        names = list(channel_names) if channel_names is not None else default_channel_names(values.shape[1])
        return cls(values, labels, list(class_names), names, sampling_rate_hz)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, index: int) -> Sample:
        return Sample(self.values[index], int(self.labels[index]))

    @property
    def samples(self) -> List[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    @property
    def series_length(self) -> int:
        return self.values.shape[2]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.values[idx],
            self.labels[idx],
            self.class_names,
            self.channel_names,
            self.sampling_rate_hz,
            self.source_indices[idx],
        )

    def replace_values(self, values: np.ndarray) -> "Dataset":
        return Dataset(
            values, self.labels, self.class_names, self.channel_names, self.sampling_rate_hz, self.source_indices
        )


def concat_datasets(parts: Sequence[Dataset]) -> Dataset:
    """Stack datasets that share class/channel layout, keeping source indices."""
    if not parts:
        raise ArgumentError("nothing to concatenate")
    first = parts[0]
    return Dataset(
        np.concatenate([p.values for p in parts]),
        np.concatenate([p.labels for p in parts]),
        first.class_names,
        first.channel_names,
        first.sampling_rate_hz,
        np.concatenate([p.source_indices for p in parts]),
    )


def class_histogram(dataset: Dataset) -> Dict[int, int]:
    labels, counts = np.unique(dataset.labels, return_counts=True)
    return {int(k): int(n) for k, n in zip(labels, counts)}


# ---------------------------------------------------------------------------
# CSV format
# ---------------------------------------------------------------------------

def csv_header(channel_names: Sequence[str], series_length: int) -> List[str]:
    return ["label"] + [f"{ch}_{t}" for ch in channel_names for t in range(series_length)]


def _channel_names_from_header(columns: List[str], series_length: int, num_channels: int) -> List[str]:
    names = []
    for c in range(num_channels):
        first = columns[1 + c * series_length]
        prefix, sep, idx = first.rpartition("_")
        if not sep or idx != "0" or not prefix:
            raise FormatError(f"column '{first}' does not start a channel block (expected '<channel>_0')", first)
        names.append(prefix)
    expected = csv_header(names, series_length)
    for got, want in zip(columns, expected):
        if got != want:
            raise FormatError(f"unexpected column '{got}' (expected '{want}')", got)
    return names


def load_csv(
    path: PathLike,
    series_length: int = 200,
    num_channels: int = 3,
    class_names: Optional[Sequence[str]] = None,
    sampling_rate_hz: float = 10000.0,
) -> Dataset:
    """Read a dataset written in the ``label,x_0..,y_0..,z_0..`` layout.

    Raises:
        FileNotFoundError: If the file doesn't exist
        FormatError: If the header doesn't match (names the offending column)
        ParseError: If a cell isn't a finite number (carries row/column)
        DimensionError: If the column count is wrong
    """
    if series_length < 1 or num_channels < 1:
        raise ArgumentError("series_length and num_channels must be positive")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file {path} not found")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    columns = list(frame.columns)
    expected_width = 1 + num_channels * series_length
    if len(columns) != expected_width:
        raise DimensionError(
            f"{path}: expected {expected_width} columns for {num_channels} channels x {series_length} points, "
            f"found {len(columns)}"
        )
    if columns[0] != "label":
        raise FormatError(f"first column must be 'label', found '{columns[0]}'", columns[0])
    channel_names = _channel_names_from_header(columns, series_length, num_channels)
    if frame.empty:
        raise ArgumentError(f"{path} has no data rows")

    cells = frame.to_numpy(dtype=object)
    try:
        labels = np.array([int(v) for v in cells[:, 0]], dtype=np.int64)
    except ValueError:
        bad = next(i for i, v in enumerate(cells[:, 0]) if not _is_int(v))
        raise ParseError(f"row {bad + 1}, column 'label': '{cells[bad, 0]}' is not an integer", bad + 1, "label")
    try:
        values = cells[:, 1:].astype(np.float64)
    except ValueError:
        values = None
    if values is None or not np.all(np.isfinite(values)):
        coerced = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(coerced)
        if values is not None:
            bad |= ~np.isfinite(values)
        rows, cols = np.nonzero(bad)
        if rows.size == 0:
            raise ParseError("unparseable numeric cell", None, None)
        row, col = int(rows[0]), columns[1 + int(cols[0])]
        raise ParseError(f"row {row + 1}, column '{col}': '{cells[row, 1 + int(cols[0])]}' is not a finite number", row + 1, col)

    names = list(class_names) if class_names is not None else default_class_names(int(labels.max()) + 1)
    dataset = Dataset(
        values.reshape(len(frame), num_channels, series_length),
        labels,
        names,
        channel_names,
        sampling_rate_hz,
    )
    logger.info("Loaded %d samples (%d channels x %d points) from %s", len(dataset), num_channels, series_length, path)
    return dataset


def _is_int(text: str) -> bool:
    try:
        int(text)
        return True
    except ValueError:
        return False


def save_csv(dataset: Dataset, path: PathLike) -> Path:
    """Write ``dataset`` in the canonical CSV layout (17 significant digits)."""
    if len(dataset) == 0:
        raise ArgumentError("cannot save an empty dataset")
    n = len(dataset)
    frame = pd.DataFrame(
        dataset.values.reshape(n, -1),
        columns=csv_header(dataset.channel_names, dataset.series_length)[1:],
    )
    frame.insert(0, "label", dataset.labels.astype(np.int64))
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, buffer.getvalue())


# ---------------------------------------------------------------------------
# Resampling and augmentation
# ---------------------------------------------------------------------------

def resample_linear(sample: Sample, target_length: int) -> Sample:
    """Linearly interpolate every channel onto ``target_length`` points.

    Output point j sits at input position j*(L-1)/(T-1), so both endpoints
    are reproduced exactly.
    """
    if target_length < 2:
        raise ArgumentError(f"target_length must be >= 2, got {target_length}")
    length = sample.series_length
    if length < 2:
        raise ArgumentError(f"series_length must be >= 2 to interpolate, got {length}")
    positions = np.arange(target_length) * (length - 1) / (target_length - 1)
    grid = np.arange(length, dtype=np.float64)
    out = np.stack([np.interp(positions, grid, channel) for channel in sample.values])
    return Sample(out, sample.label)


def resample_dataset(dataset: Dataset, target_length: int) -> Dataset:
    if target_length == dataset.series_length:
        return dataset
    resampled = np.stack([resample_linear(s, target_length).values for s in dataset.samples])
    return dataset.replace_values(resampled)


def augment_bounded_noise(dataset: Dataset, amplitude: float, seed: int) -> Dataset:
    """Add uniform noise in ``[-amplitude, amplitude]`` to every value."""
    if amplitude < 0:
        raise ArgumentError(f"amplitude must be >= 0, got {amplitude}")
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-amplitude, amplitude, size=dataset.values.shape)
    if amplitude == 0:
        noise = np.zeros_like(noise)
    return dataset.replace_values(dataset.values + noise)


def segment_recording(
    record: np.ndarray, window: int, label: int, overlap: float = 0.0
) -> List[Sample]:
    """Cut a continuous ``(num_channels, T)`` recording into fixed windows.

    Windows start every ``window * (1 - overlap)`` points; a trailing
    partial window is dropped.
    """
    record = np.asarray(record, dtype=np.float64)
    if record.ndim != 2:
        raise DimensionError(f"record must be (num_channels, T), got shape {record.shape}")
    if window < 1 or window > record.shape[1]:
        raise ArgumentError(f"window must be in [1, {record.shape[1]}], got {window}")
    if not 0.0 <= overlap < 1.0:
        raise ArgumentError(f"overlap must be in [0, 1), got {overlap}")
    step = max(1, int(window * (1.0 - overlap)))
    starts = range(0, record.shape[1] - window + 1, step)
    return [Sample(record[:, s : s + window], label) for s in starts]


# ---------------------------------------------------------------------------
# Fold planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class SplitPlan:
    folds: List[Fold]
    seed: int
    fractions: Tuple[float, float, float]
    stratified: bool = True
    num_samples: int = field(default=0)

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > FRACTION_TOL:
            raise ArgumentError(f"fractions {self.fractions} must sum to 1")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fractions": list(self.fractions),
            "stratified": self.stratified,
            "num_samples": self.num_samples,
            "folds": [
                {"train": f.train.tolist(), "val": f.val.tolist(), "test": f.test.tolist()} for f in self.folds
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitPlan":
        folds = [
            Fold(np.array(f["train"], dtype=np.int64), np.array(f["val"], dtype=np.int64), np.array(f["test"], dtype=np.int64))
            for f in data["folds"]
        ]
        return cls(folds, int(data["seed"]), tuple(data["fractions"]), bool(data["stratified"]), int(data["num_samples"]))


def _test_block(order: np.ndarray, fold: int, num_folds: int, test_fraction: float) -> np.ndarray:
    """k-th contiguous test block of a shuffled index list."""
    if abs(num_folds * test_fraction - 1.0) <= FRACTION_TOL:
        return np.array_split(order, num_folds)[fold]
    size = int(round(test_fraction * len(order)))
    return order[fold * size : (fold + 1) * size]


def _split_rest(rest: np.ndarray, train_fraction: float, val_fraction: float) -> Tuple[np.ndarray, np.ndarray]:
    share = val_fraction / (train_fraction + val_fraction) if train_fraction + val_fraction > 0 else 0.0
    n_val = int(round(len(rest) * share))
    return rest[n_val:], rest[:n_val]


def make_split_plan(
    dataset: Dataset,
    num_folds: int = 5,
    fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    stratified: bool = True,
) -> SplitPlan:
    """Plan ``num_folds`` train/val/test partitions from one seeded permutation.

    Fold k tests on the k-th contiguous block of the permutation (per class
    when stratified); the remaining indices are split train:val in the ratio
    of the first two fractions.
    """
    if num_folds < 1:
        raise ArgumentError(f"num_folds must be positive, got {num_folds}")
    train_f, val_f, test_f = (float(x) for x in fractions)
    if min(train_f, val_f, test_f) < 0:
        raise ArgumentError(f"fractions must be non-negative, got {fractions}")
    if abs(train_f + val_f + test_f - 1.0) > FRACTION_TOL:
        raise ArgumentError(f"fractions {fractions} must sum to 1")
    if num_folds * test_f > 1.0 + FRACTION_TOL:
        raise ArgumentError(f"{num_folds} folds x test fraction {test_f} exceeds the data")
    n = len(dataset)
    rng = np.random.default_rng(seed)

    if stratified:
        groups = [np.flatnonzero(dataset.labels == k) for k in range(dataset.num_classes)]
        groups = [rng.permutation(g) for g in groups if g.size]
    else:
        groups = [rng.permutation(n)]

    folds = []
    for k in range(num_folds):
        train_parts, val_parts, test_parts = [], [], []
        for order in groups:
            test = _test_block(order, k, num_folds, test_f)
            rest = order[~np.isin(order, test)]
            train, val = _split_rest(rest, train_f, val_f)
            train_parts.append(train)
            val_parts.append(val)
            test_parts.append(test)
        folds.append(
            Fold(
                np.sort(np.concatenate(train_parts)),
                np.sort(np.concatenate(val_parts)),
                np.sort(np.concatenate(test_parts)),
            )
        )
    plan = SplitPlan(folds, seed, (train_f, val_f, test_f), stratified, n)
    logger.debug(
        "Split plan: %d folds, sizes %s",
        num_folds,
        [(len(f.train), len(f.val), len(f.test)) for f in folds],
    )
    return plan
