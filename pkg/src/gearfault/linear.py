"""
One-vs-rest ridge classifier with leave-one-out selection of the
regularisation strength, plus softmax calibration of its decision scores.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.optimize import minimize_scalar
from scipy.special import log_softmax, softmax

from .config import DEFAULT_ALPHAS
from .ensemble import ProbabilityMatrix
from .errors import ArgumentError, DimensionError
from .fileio import PathLike, read_json, write_json
from .minirocket import FeatureMatrix

logger = logging.getLogger("gearfault.linear")

FORMAT_TAG = "gearfault.ridge"
FORMAT_VERSION = 1

Features = Union[np.ndarray, FeatureMatrix]


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    intercepts: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    alpha: float
    temperature: float = 1.0
    loo_mse: Dict[float, float] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_features(self) -> int:
        return self.weights.shape[1]


def _matrix(features: Features) -> np.ndarray:
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"features must be a 2-D matrix, got shape {values.shape}")
    return values


def one_vs_rest_targets(labels: np.ndarray, num_classes: int) -> np.ndarray:
    targets = -np.ones((labels.shape[0], num_classes))
    targets[np.arange(labels.shape[0]), labels] = 1.0
    return targets


def _standardize(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds[stds == 0] = 1.0
    return (x - means) / stds, means, stds


def _loo_errors(z: np.ndarray, yc: np.ndarray, y: np.ndarray, alphas: Sequence[float]) -> List[float]:
    """Leave-one-out mean squared error of every alpha from one eigendecomposition.

    Uses the covariance form when there are fewer features than samples and
    the Gram form otherwise. The ``1/n`` term accounts for the fitted intercept.
    """
    n, p = z.shape
    if p <= n:
        eigvals, v = linalg.eigh(z.T @ z)
        eigvals = np.clip(eigvals, 0.0, None)
        m = z @ v
        mt_y = m.T @ yc
        m_sq = m**2
    else:
        eigvals, q = linalg.eigh(z @ z.T)
        eigvals = np.clip(eigvals, 0.0, None)
        qt_y = q.T @ yc
        q_sq = q**2
    errors = []
    y_mean = y - yc
    for alpha in alphas:
        if p <= n:
            inv = 1.0 / (eigvals + alpha)
            fitted = m @ (mt_y * inv[:, None])
            hat = m_sq @ inv
        else:
            shrink = eigvals / (eigvals + alpha)
            fitted = q @ (qt_y * shrink[:, None])
            hat = q_sq @ shrink
        hat = hat + 1.0 / n
        residual = (y - (fitted + y_mean)) / (1.0 - hat)[:, None]
        errors.append(float(np.mean(residual**2)))
    return errors


def solve_ridge(z: np.ndarray, yc: np.ndarray, alpha: float) -> np.ndarray:
    """Weights ``(num_targets, num_features)`` of ``(ZᵀZ + αI) W = Zᵀ Y`` by Cholesky.

    Solves the smaller of the primal and dual systems.
    """
    n, p = z.shape
    if p <= n:
        factor = linalg.cho_factor(z.T @ z + alpha * np.eye(p))
        return linalg.cho_solve(factor, z.T @ yc).T
    factor = linalg.cho_factor(z @ z.T + alpha * np.eye(n))
    return (z.T @ linalg.cho_solve(factor, yc)).T


def fit_ridge(
    features: Features,
    labels: Sequence[int],
    alphas: Optional[Sequence[float]] = None,
    num_classes: Optional[int] = None,
) -> RidgeModel:
    """Fit a one-vs-rest ridge classifier on standardized features.

    ``alpha`` is the candidate with the lowest leave-one-out error (first
    one wins on ties).
    """
    x = _matrix(features)
    y_labels = np.asarray(labels, dtype=np.int64)
    alphas = list(alphas) if alphas is not None else list(DEFAULT_ALPHAS)
    if x.shape[0] != y_labels.shape[0]:
        raise DimensionError(f"{x.shape[0]} feature rows for {y_labels.shape[0]} labels")
    if not alphas or any(a <= 0 for a in alphas):
        raise ArgumentError("alphas must be a non-empty list of positive reals")
    if not np.all(np.isfinite(x)):
        raise ArgumentError("features contain non-finite values")
    if np.unique(y_labels).size < 2:
        raise ArgumentError("ridge classifier needs at least two classes in the labels")
    k = int(num_classes) if num_classes is not None else int(y_labels.max()) + 1
    if y_labels.min() < 0 or y_labels.max() >= k:
        raise ArgumentError(f"labels must lie in [0, {k})")

    z, means, stds = _standardize(x)
    y = one_vs_rest_targets(y_labels, k)
    intercepts = y.mean(axis=0)
    yc = y - intercepts

    if len(alphas) == 1:
        errors = []
        best = 0
    else:
        errors = _loo_errors(z, yc, y, alphas)
        best = int(np.argmin(errors))
    alpha = float(alphas[best])
    weights = solve_ridge(z, yc, alpha)
    logger.info(
        "Ridge fit: %d samples x %d features, %d classes, alpha=%g",
        x.shape[0],
        x.shape[1],
        k,
        alpha,
    )
    return RidgeModel(
        weights=weights,
        intercepts=intercepts,
        feature_means=means,
        feature_stds=stds,
        alpha=alpha,
        loo_mse={float(a): e for a, e in zip(alphas, errors)},
    )


def decision_scores(model: RidgeModel, features: Features) -> np.ndarray:
    x = _matrix(features)
    if x.shape[1] != model.num_features:
        raise DimensionError(f"model expects {model.num_features} features, got {x.shape[1]}")
    return ((x - model.feature_means) / model.feature_stds) @ model.weights.T + model.intercepts


def predict(model: RidgeModel, features: Features) -> np.ndarray:
    return np.argmax(decision_scores(model, features), axis=1)


def predict_proba(
    model: RidgeModel,
    features: Features,
    true_labels: Optional[Sequence[int]] = None,
    model_tag: str = "minirocket",
) -> ProbabilityMatrix:
    """Softmax of ``scores / temperature``; argmax matches the raw scores."""
    scores = decision_scores(model, features)
    probs = softmax(scores / model.temperature, axis=1)
    indices = features.source_indices if isinstance(features, FeatureMatrix) else None
    return ProbabilityMatrix(probs, model_tag, sample_indices=indices, true_labels=true_labels)


def fit_temperature(
    model: RidgeModel,
    features: Features,
    labels: Sequence[int],
    bounds: Tuple[float, float] = (1e-2, 1e2),
) -> RidgeModel:
    """Return ``model`` with the temperature minimising the NLL of ``labels``."""
    scores = decision_scores(model, features)
    y = np.asarray(labels, dtype=np.int64)
    rows = np.arange(y.shape[0])

    def nll(log_t: float) -> float:
        return float(-np.mean(log_softmax(scores / np.exp(log_t), axis=1)[rows, y]))

    result = minimize_scalar(nll, bounds=(np.log(bounds[0]), np.log(bounds[1])), method="bounded")
    temperature = float(np.exp(result.x))
    logger.info("Tuned softmax temperature to %.4g (NLL %.4g)", temperature, result.fun)
    return dataclasses.replace(model, temperature=temperature)


def save_model(model: RidgeModel, path: PathLike):
    return write_json(
        path,
        {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "alpha": model.alpha,
            "temperature": model.temperature,
            "loo_mse": [[a, e] for a, e in model.loo_mse.items()],
            "weights": model.weights.tolist(),
            "intercepts": model.intercepts.tolist(),
            "feature_means": model.feature_means.tolist(),
            "feature_stds": model.feature_stds.tolist(),
        },
    )


def load_model(path: PathLike) -> RidgeModel:
    data = read_json(path)
    if data.get("format") != FORMAT_TAG or data.get("version") != FORMAT_VERSION:
        raise ArgumentError(f"{path} is not a {FORMAT_TAG} v{FORMAT_VERSION} artifact")
    return RidgeModel(
        weights=np.asarray(data["weights"], dtype=np.float64),
        intercepts=np.asarray(data["intercepts"], dtype=np.float64),
        feature_means=np.asarray(data["feature_means"], dtype=np.float64),
        feature_stds=np.asarray(data["feature_stds"], dtype=np.float64),
        alpha=float(data["alpha"]),
        temperature=float(data["temperature"]),
        loo_mse={float(a): float(e) for a, e in data["loo_mse"]},
    )
