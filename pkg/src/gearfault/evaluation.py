"""
Cross-validation harness, confusion matrices and summary reports.

Each (fold, method) run trains on the fold's train (and val) indices, predicts
the fold's test indices and produces a :class:`FoldReport`. Reports and test
probability matrices are persisted per fold so folds can run in separate
processes and the ensemble rows can be computed from the files alone.
"""

from __future__ import annotations

import dataclasses
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from . import ensemble
from . import linear
from . import minirocket
from .config import RunConfig, config_hash
from .dataset import FLOAT_FORMAT, Dataset, SplitPlan, concat_datasets
from .ensemble import ProbabilityMatrix, read_probability_csv, write_probability_csv
from .errors import ArgumentError, DimensionError, TrainingError
from .fileio import PathLike, atomic_write_bytes, atomic_write_text, read_json, write_json
from .models import build_lstmfcn, build_msresnet, predict_proba, train

logger = logging.getLogger("gearfault.evaluation")

AXIS_CONVENTION = "rows=predicted,cols=true"
STD_CONVENTION = "sample"
METHODS = ("msresnet", "lstmfcn", "minirocket")
ENSEMBLE_PREFIX = "ensemble_"


def confusion_matrix(true: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    """Count matrix with predicted classes on rows and true classes on columns."""
    t = np.asarray(true, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionError(f"true {t.shape} and pred {p.shape} must be equal-length vectors")
    for name, v in (("true", t), ("pred", p)):
        if v.size and (v.min() < 0 or v.max() >= num_classes):
            raise ArgumentError(f"{name} labels must lie in [0, {num_classes})")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (p, t), 1)
    return matrix


def accuracy_percent(confusion: np.ndarray) -> float:
    total = int(confusion.sum())
    if total == 0:
        raise ArgumentError("empty confusion matrix")
    return 100.0 * float(np.trace(confusion)) / total


@dataclass
class FoldReport:
    fold_index: int
    method: str
    accuracy_percent: float
    confusion: np.ndarray
    train_seconds: float
    seed: str = ""
    config_hash: str = ""
    axis_convention: str = AXIS_CONVENTION

    @property
    def test_size(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fold_index": self.fold_index,
            "method": self.method,
            "accuracy_percent": self.accuracy_percent,
            "confusion": self.confusion.tolist(),
            "train_seconds": self.train_seconds,
            "test_size": self.test_size,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "axis_convention": self.axis_convention,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FoldReport":
        return cls(
            fold_index=int(data["fold_index"]),
            method=str(data["method"]),
            accuracy_percent=float(data["accuracy_percent"]),
            confusion=np.asarray(data["confusion"], dtype=np.int64),
            train_seconds=float(data["train_seconds"]),
            seed=str(data.get("seed", "")),
            config_hash=str(data.get("config_hash", "")),
            axis_convention=str(data.get("axis_convention", AXIS_CONVENTION)),
        )

    def save(self, path: PathLike) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: PathLike) -> "FoldReport":
        return cls.from_dict(read_json(path))


@dataclass
class CVSummary:
    method: str
    accuracies: List[float]
    mean: float
    std: float
    mean_seconds: float
    std_convention: str = STD_CONVENTION

    @property
    def is_ensemble(self) -> bool:
        return self.method.startswith(ENSEMBLE_PREFIX)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "accuracies": list(self.accuracies),
            "mean": self.mean,
            "std": self.std,
            "mean_seconds": self.mean_seconds,
            "std_convention": self.std_convention,
        }


def summarize(reports: Sequence[FoldReport]) -> CVSummary:
    """Mean and sample standard deviation of the fold accuracies (std 0 for one fold)."""
    if not reports:
        raise ArgumentError("summarize needs at least one fold report")
    methods = {r.method for r in reports}
    if len(methods) != 1:
        raise ArgumentError(f"cannot summarize mixed methods {sorted(methods)}")
    ordered = sorted(reports, key=lambda r: r.fold_index)
    accuracies = [r.accuracy_percent for r in ordered]
    std = float(np.std(accuracies, ddof=1)) if len(accuracies) > 1 else 0.0
    return CVSummary(
        method=ordered[0].method,
        accuracies=accuracies,
        mean=float(np.mean(accuracies)),
        std=std,
        mean_seconds=float(np.mean([r.train_seconds for r in ordered])),
    )


# ---------------------------------------------------------------------------
# Fold methods
# ---------------------------------------------------------------------------

@dataclass
class FoldOutcome:
    probabilities: ProbabilityMatrix
    train_seconds: float
    seed: str = ""
    # writes the fitted model next to the fold outputs, given a file stem
    save: Optional[Callable[[Path], List[Path]]] = None


class FoldMethod:
    """Something that can be fitted on a fold and score its test split."""

    name = ""

    def settings(self) -> Dict[str, Any]:
        return {}

    def fit_predict(self, train_set: Dataset, val_set: Dataset, test_set: Dataset, fold_index: int) -> FoldOutcome:
        raise NotImplementedError


class MiniRocketMethod(FoldMethod):
    """MiniRocket features + ridge, fitted on train and val together."""

    name = "minirocket"

    def __init__(self, config: RunConfig):
        self.transform_config = config.minirocket
        self.ridge_config = config.ridge

    def settings(self) -> Dict[str, Any]:
        return {
            "minirocket": self.transform_config.model_dump(mode="json"),
            "ridge": self.ridge_config.model_dump(mode="json"),
        }

    def fit_predict(self, train_set, val_set, test_set, fold_index):
        started = time.perf_counter()
        fit_set = concat_datasets([train_set, val_set])
        n_jobs = self.transform_config.n_jobs
        fitted = minirocket.fit(fit_set, self.transform_config)
        features = minirocket.transform(fitted, fit_set, n_jobs=n_jobs)
        model = linear.fit_ridge(
            features, fit_set.labels, self.ridge_config.alphas, num_classes=fit_set.num_classes
        )
        if self.ridge_config.tune_temperature and len(val_set):
            val_features = minirocket.transform(fitted, val_set, n_jobs=n_jobs)
            model = linear.fit_temperature(model, val_features, val_set.labels)
        else:
            model = dataclasses.replace(model, temperature=self.ridge_config.temperature)
        seconds = time.perf_counter() - started
        probs = linear.predict_proba(
            model, minirocket.transform(fitted, test_set, n_jobs=n_jobs), true_labels=test_set.labels
        )

        def save(stem: Path) -> List[Path]:
            return [
                write_json(stem.with_name(stem.name + ".transform.json"), fitted.to_dict()),
                linear.save_model(model, stem.with_name(stem.name + ".ridge.json")),
            ]

        return FoldOutcome(probs, seconds, str(self.transform_config.seed), save)


class DeepMethod(FoldMethod):
    """One of the two deep networks; fold k trains with seed ``seed + k``."""

    def __init__(self, name: str, config: RunConfig):
        if name not in ("msresnet", "lstmfcn"):
            raise ArgumentError(f"unknown deep model '{name}'")
        self.name = name
        self.config = config

    @property
    def section(self):
        return getattr(self.config, self.name)

    def settings(self) -> Dict[str, Any]:
        return {self.name: self.section.model_dump(mode="json"), "train": self.config.train.model_dump(mode="json")}

    def build(self, dataset: Dataset, seed: int):
        section = self.section.model_copy(update={"seed": seed})
        if section.num_classes != dataset.num_classes:
            raise ArgumentError(
                f"{self.name} is configured for {section.num_classes} classes, data has {dataset.num_classes}"
            )
        dtype = self.config.train.dtype
        if self.name == "msresnet":
            return build_msresnet(section, dataset.num_channels, dtype)
        return build_lstmfcn(section, dataset.num_channels, dataset.series_length, dtype)

    def fit_predict(self, train_set, val_set, test_set, fold_index):
        seed = self.section.seed + fold_index
        model = self.build(train_set, seed)
        trained = train(
            model,
            train_set,
            val_set,
            self.config.train,
            epochs=self.section.epochs,
            lr=self.section.lr,
            seed=seed,
            run_config=self.config.resolved(),
        )
        probs = predict_proba(trained, test_set)

        def save(stem: Path) -> List[Path]:
            return [trained.save(stem.with_name(stem.name + ".ckpt"))]

        return FoldOutcome(probs, trained.train_seconds, str(seed), save)


def make_method(name: str, config: RunConfig) -> FoldMethod:
    if name == "minirocket":
        return MiniRocketMethod(config)
    if name in ("msresnet", "lstmfcn"):
        return DeepMethod(name, config)
    raise ArgumentError(f"unknown method '{name}' (expected one of {', '.join(METHODS)})")


# ---------------------------------------------------------------------------
# Running folds
# ---------------------------------------------------------------------------

def _check_disjoint(train_set: Dataset, val_set: Dataset, test_set: Dataset, fold_index: int) -> None:
    """Raise if any sample is shared between the train, validation and test splits."""
    parts = {"train": train_set.source_indices, "val": val_set.source_indices, "test": test_set.source_indices}
    for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
        shared = np.intersect1d(parts[a], parts[b])
        if shared.size:
            raise ArgumentError(
                f"fold {fold_index}: {shared.size} sample(s) in both {a} and {b} splits (first: {int(shared[0])})"
            )


def probability_path(out_dir: PathLike, method: str, fold_index: int) -> Path:
    return Path(out_dir) / f"probs_{method}_fold{fold_index}.csv"


def report_path(out_dir: PathLike, method: str, fold_index: int) -> Path:
    return Path(out_dir) / f"report_{method}_fold{fold_index}.json"


def run_fold(
    dataset: Dataset,
    method: Union[str, FoldMethod],
    plan: SplitPlan,
    fold_index: int,
    config: Optional[RunConfig] = None,
    out_dir: Optional[PathLike] = None,
) -> FoldReport:
    """Fit ``method`` on one fold and score its test split.

    With ``out_dir`` the test probability CSV, the fold report JSON and the
    fitted model are written there.
    """
    config = config or RunConfig()
    if isinstance(method, str):
        method = make_method(method, config)
    if plan.num_samples and plan.num_samples != len(dataset):
        raise ArgumentError(f"split plan covers {plan.num_samples} samples, dataset has {len(dataset)}")
    if not 0 <= fold_index < len(plan.folds):
        raise ArgumentError(f"fold {fold_index} out of range [0, {len(plan.folds)})")
    fold = plan.folds[fold_index]
    train_set, val_set, test_set = (dataset.subset(ix) for ix in (fold.train, fold.val, fold.test))
    if len(test_set) == 0:
        raise ArgumentError(f"fold {fold_index} has an empty test split")
    _check_disjoint(train_set, val_set, test_set, fold_index)

    try:
        outcome = method.fit_predict(train_set, val_set, test_set, fold_index)
    except TrainingError as e:
        raise e.with_fold(fold_index) from e

    probs = outcome.probabilities
    confusion = confusion_matrix(test_set.labels, ensemble.predict(probs), dataset.num_classes)
    report = FoldReport(
        fold_index=fold_index,
        method=method.name,
        accuracy_percent=accuracy_percent(confusion),
        confusion=confusion,
        train_seconds=outcome.train_seconds,
        seed=outcome.seed,
        config_hash=config_hash(method.settings()),
    )
    logger.info(
        "%s fold %d: accuracy %.3f%% on %d test samples (%.1fs)",
        method.name,
        fold_index,
        report.accuracy_percent,
        report.test_size,
        report.train_seconds,
    )
    if out_dir is not None:
        write_probability_csv(probs, probability_path(out_dir, method.name, fold_index))
        report.save(report_path(out_dir, method.name, fold_index))
        if outcome.save is not None:
            outcome.save(Path(out_dir) / f"model_{method.name}_fold{fold_index}")
    return report


def run_cv(
    dataset: Dataset,
    method: Union[str, FoldMethod],
    plan: SplitPlan,
    config: Optional[RunConfig] = None,
    out_dir: Optional[PathLike] = None,
) -> List[FoldReport]:
    config = config or RunConfig()
    if isinstance(method, str):
        method = make_method(method, config)
    return [run_fold(dataset, method, plan, k, config, out_dir) for k in range(len(plan.folds))]


def ensemble_reports(
    prob_paths_by_fold: Sequence[Sequence[PathLike]],
    rule: str,
    member_seconds: Optional[Sequence[float]] = None,
    out_dir: Optional[PathLike] = None,
    fold_indices: Optional[Sequence[int]] = None,
) -> List[FoldReport]:
    """Fold reports for an ensemble rule, computed only from persisted probability CSVs.

    Entry i of ``member_seconds`` is the summed training time of the members
    on that fold; ``fold_indices`` names the folds (default 0, 1, ...).
    """
    method = f"{ENSEMBLE_PREFIX}{rule}"
    folds = list(fold_indices) if fold_indices is not None else list(range(len(prob_paths_by_fold)))
    if len(folds) != len(prob_paths_by_fold):
        raise ArgumentError("one fold index is needed per group of probability files")
    reports = []
    for i, (k, paths) in enumerate(zip(folds, prob_paths_by_fold)):
        mats = [read_probability_csv(p) for p in paths]
        combined = ensemble.combine(mats, rule)
        if not combined.has_labels:
            raise ArgumentError(f"fold {k}: probability files carry no true labels")
        confusion = confusion_matrix(combined.true_labels, ensemble.predict(combined), combined.num_classes)
        report = FoldReport(
            fold_index=k,
            method=method,
            accuracy_percent=accuracy_percent(confusion),
            confusion=confusion,
            train_seconds=float(member_seconds[i]) if member_seconds is not None else 0.0,
            config_hash=config_hash({"rule": rule, "members": [m.model_tag for m in mats]}),
        )
        if out_dir is not None:
            write_probability_csv(combined, probability_path(out_dir, method, k))
            report.save(report_path(out_dir, method, k))
        reports.append(report)
    return reports


def load_reports(directory: PathLike) -> Dict[str, List[FoldReport]]:
    """All ``report_<method>_fold<k>.json`` files in ``directory``, grouped by method."""
    grouped: Dict[str, List[FoldReport]] = {}
    for path in sorted(Path(directory).glob("report_*_fold*.json")):
        report = FoldReport.load(path)
        grouped.setdefault(report.method, []).append(report)
    for reports in grouped.values():
        reports.sort(key=lambda r: r.fold_index)
    return grouped


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

Confusions = Mapping[Tuple[str, int], np.ndarray]


def confusions_of(reports: Sequence[FoldReport]) -> Dict[Tuple[str, int], np.ndarray]:
    return {(r.method, r.fold_index): r.confusion for r in reports}


def summary_frame(summaries: Sequence[CVSummary]) -> pd.DataFrame:
    folds = max((len(s.accuracies) for s in summaries), default=0)
    rows = []
    for s in summaries:
        row: Dict[str, Any] = {"method": s.method}
        for k in range(folds):
            row[f"fold_{k}"] = s.accuracies[k] if k < len(s.accuracies) else np.nan
        row.update(mean=s.mean, std=s.std, mean_seconds=s.mean_seconds)
        rows.append(row)
    columns = ["method"] + [f"fold_{k}" for k in range(folds)] + ["mean", "std", "mean_seconds"]
    return pd.DataFrame(rows, columns=columns)


def _markdown(summaries: Sequence[CVSummary]) -> str:
    lines = [
        "# Cross-validation summary",
        "",
        f"Accuracy is mean ± {STD_CONVENTION} standard deviation over folds.",
        f"Confusion matrices: {AXIS_CONVENTION}.",
        "",
        "| Method | Average Accuracy (%) | Average Training Time (s) |",
        "|---|---|---|",
    ]
    for s in summaries:
        seconds = "-" if s.is_ensemble else f"{s.mean_seconds:.1f}"
        lines.append(f"| {s.method} | {s.mean:.3f} ± {s.std:.3f} | {seconds} |")
    return "\n".join(lines) + "\n"


def _confusion_csv(matrix: np.ndarray) -> str:
    k = matrix.shape[0]
    frame = pd.DataFrame(matrix, columns=[f"true_{j}" for j in range(k)])
    frame.insert(0, "pred", np.arange(k))
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def render_report(summaries: Sequence[CVSummary], confusions: Confusions, path: PathLike) -> List[Path]:
    """Write ``summary.csv``, ``summary.md`` and one ``confusion_<method>_<fold>.csv`` per fold into ``path``."""
    out = Path(path)
    buffer = io.StringIO()
    summary_frame(summaries).to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    written = [
        atomic_write_text(out / "summary.csv", buffer.getvalue()),
        atomic_write_text(out / "summary.md", _markdown(summaries)),
    ]
    for (method, fold), matrix in sorted(confusions.items()):
        written.append(atomic_write_text(out / f"confusion_{method}_{fold}.csv", _confusion_csv(np.asarray(matrix))))
    return written


def read_summary_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def render_report_pdf(summaries: Sequence[CVSummary], path: PathLike) -> Path:
    """Render the summary table as a PDF (byte stable for identical input)."""
    buffer = io.BytesIO()
    doc = SimpleDocTemplate(
        buffer,
        pagesize=letter,
        rightMargin=0.75 * inch,
        leftMargin=0.75 * inch,
        topMargin=0.75 * inch,
        bottomMargin=0.75 * inch,
        title="Cross-validation summary",
        invariant=1,
    )
    styles = getSampleStyleSheet()
    title_style = ParagraphStyle(
        "SummaryTitle",
        parent=styles["Heading1"],
        fontSize=16,
        spaceAfter=12,
        alignment=1,
        fontName="Helvetica-Bold",
    )
    info_style = ParagraphStyle(
        "SummaryInfo",
        parent=styles["BodyText"],
        fontSize=9,
        textColor=colors.HexColor("#555555"),
        fontName="Helvetica",
    )
    story = [
        Paragraph("Cross-validation summary", title_style),
        Paragraph(f"Mean accuracy ± {STD_CONVENTION} standard deviation over folds.", info_style),
        Spacer(1, 0.2 * inch),
    ]
    data = [["Method", "Average Accuracy (%)", "Average Training Time (s)"]]
    for s in summaries:
        data.append([s.method, f"{s.mean:.3f} ± {s.std:.3f}", "-" if s.is_ensemble else f"{s.mean_seconds:.1f}"])
    table = Table(data, colWidths=[2.2 * inch, 2.2 * inch, 2.2 * inch])
    table.setStyle(
        TableStyle(
            [
                ("FONTNAME", (0, 0), (-1, -1), "Helvetica"),
                ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                ("FONTSIZE", (0, 0), (-1, -1), 9),
                ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor("#e8e8e8")),
                ("GRID", (0, 0), (-1, -1), 0.5, colors.HexColor("#999999")),
                ("VALIGN", (0, 0), (-1, -1), "TOP"),
                ("BOTTOMPADDING", (0, 0), (-1, -1), 4),
            ]
        )
    )
    story.append(table)
    doc.build(story)
    return atomic_write_bytes(path, buffer.getvalue())
