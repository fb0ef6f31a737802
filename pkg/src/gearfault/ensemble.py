"""
Probability matrices and the average/max ensemble rules.

Matrices are exchanged as CSV files (``sample_index,p_0..p_{K-1},pred,true``)
so models trained in separate processes can be combined offline.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .dataset import FLOAT_FORMAT
from .errors import ArgumentError, DimensionError, FormatError
from .fileio import PathLike, atomic_write_text

logger = logging.getLogger("gearfault.ensemble")

ROW_SUM_TOL = 1e-6
UNKNOWN_LABEL = -1


@dataclass(frozen=True)
class ProbabilityMatrix:
    """Per-sample class probabilities from one model (or an ensemble).

    ``normalized=False`` marks a score matrix whose rows need not sum to 1
    (the output of the max rule).
    """

    values: np.ndarray
    model_tag: str
    sample_indices: Optional[np.ndarray] = None
    true_labels: Optional[np.ndarray] = None
    normalized: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"probability matrix must be 2-D, got shape {values.shape}")
        n = values.shape[0]
        indices = np.arange(n, dtype=np.int64) if self.sample_indices is None else np.asarray(self.sample_indices, dtype=np.int64)
        labels = (
            np.full(n, UNKNOWN_LABEL, dtype=np.int64)
            if self.true_labels is None
            else np.asarray(self.true_labels, dtype=np.int64)
        )
        if indices.shape != (n,) or labels.shape != (n,):
            raise DimensionError("sample_indices and true_labels need one entry per row")
        if self.normalized:
            if np.any(values < 0) or np.any(values > 1):
                raise ArgumentError(f"{self.model_tag}: probabilities must lie in [0, 1]")
            sums = values.sum(axis=1)
            if n and np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
                raise ArgumentError(f"{self.model_tag}: probability rows must sum to 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sample_indices", indices)
        object.__setattr__(self, "true_labels", labels)

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    @property
    def has_labels(self) -> bool:
        return bool(np.all(self.true_labels >= 0))


def predict(mat: ProbabilityMatrix) -> np.ndarray:
    """Row argmax; ties go to the lowest class index."""
    return np.argmax(mat.values, axis=1)


def _check_aligned(mats: Sequence[ProbabilityMatrix]) -> None:
    if not mats:
        raise ArgumentError("ensemble needs at least one probability matrix")
    first = mats[0]
    for other in mats[1:]:
        if other.values.shape != first.values.shape:
            raise DimensionError(
                f"{other.model_tag} has shape {other.values.shape}, {first.model_tag} has {first.values.shape}"
            )
        if not np.array_equal(other.sample_indices, first.sample_indices):
            raise DimensionError(f"{other.model_tag} and {first.model_tag} cover different samples")


def _labels_of(mats: Sequence[ProbabilityMatrix]) -> np.ndarray:
    for mat in mats:
        if mat.has_labels:
            return mat.true_labels
    return mats[0].true_labels


def ensemble_average(mats: Sequence[ProbabilityMatrix], model_tag: str = "ensemble_average") -> ProbabilityMatrix:
    _check_aligned(mats)
    stacked = np.stack([m.values for m in mats])
    return ProbabilityMatrix(stacked.mean(axis=0), model_tag, mats[0].sample_indices, _labels_of(mats))


def ensemble_max(
    mats: Sequence[ProbabilityMatrix], model_tag: str = "ensemble_max"
) -> Tuple[np.ndarray, ProbabilityMatrix]:
    """Per-class maximum over models, and its row argmax.

    The combined matrix is left unnormalized.
    """
    _check_aligned(mats)
    stacked = np.stack([m.values for m in mats])
    combined = ProbabilityMatrix(
        stacked.max(axis=0), model_tag, mats[0].sample_indices, _labels_of(mats), normalized=False
    )
    return predict(combined), combined


RULES = {"average": ensemble_average, "max": lambda mats: ensemble_max(mats)[1]}


def combine(mats: Sequence[ProbabilityMatrix], rule: str) -> ProbabilityMatrix:
    if rule not in RULES:
        raise ArgumentError(f"unknown ensemble rule '{rule}' (expected one of {sorted(RULES)})")
    return RULES[rule](mats)


# ---------------------------------------------------------------------------
# CSV format
# ---------------------------------------------------------------------------

def _prefix(mat: ProbabilityMatrix) -> str:
    return "p" if mat.normalized else "s"


def write_probability_csv(mat: ProbabilityMatrix, path: PathLike) -> Path:
    """Write ``sample_index,p_0..,pred,true`` (``s_k`` columns for score matrices)."""
    prefix = _prefix(mat)
    frame = pd.DataFrame(mat.values, columns=[f"{prefix}_{k}" for k in range(mat.num_classes)])
    frame.insert(0, "sample_index", mat.sample_indices)
    frame["pred"] = predict(mat)
    frame["true"] = mat.true_labels
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, buffer.getvalue())


def read_probability_csv(path: PathLike, model_tag: Optional[str] = None) -> ProbabilityMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Probability file {path} not found")
    frame = pd.read_csv(path, float_precision="round_trip")
    columns: List[str] = list(frame.columns)
    for prefix, normalized in (("p", True), ("s", False)):
        value_columns = [c for c in columns if c.startswith(f"{prefix}_")]
        if value_columns:
            break
    if not value_columns or columns[0] != "sample_index" or columns[-2:] != ["pred", "true"]:
        raise FormatError(f"{path} is not a probability CSV (columns {columns[:3]}...)")
    return ProbabilityMatrix(
        frame[value_columns].to_numpy(dtype=np.float64),
        model_tag or path.stem,
        sample_indices=frame["sample_index"].to_numpy(dtype=np.int64),
        true_labels=frame["true"].to_numpy(dtype=np.int64),
        normalized=normalized,
    )
