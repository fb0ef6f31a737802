"""Adam, a reduce-on-plateau learning-rate scheduler and gradient clipping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .errors import ArgumentError, DimensionError

logger = logging.getLogger("gearfault.optim")


@dataclass
class AdamState:
    lr: float = 0.001
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Parameters with no gradient are left alone."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("Adam state was built for a different parameter list")
    state.step += 1
    beta1, beta2 = state.betas
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.name} {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data = p.data - update.astype(p.dtype)


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` when a maximised metric stalls.

    An epoch improves when ``metric > best + min_delta``; after more than
    ``patience`` epochs without improvement the rate drops and the counter
    resets.
    """

    factor: float = 0.1
    patience: int = 10
    min_delta: float = 1e-4
    best_metric: float = -math.inf
    epochs_since_improvement: int = 0
    mode: str = "max"

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ArgumentError(f"factor must be in (0, 1), got {self.factor}")
        if self.mode != "max":
            raise ArgumentError("only mode='max' is supported")

    def step(self, metric: float, current_lr: float) -> float:
        if metric > self.best_metric + self.min_delta:
            self.best_metric = metric
            self.epochs_since_improvement = 0
            return current_lr
        self.epochs_since_improvement += 1
        if self.epochs_since_improvement > self.patience:
            self.epochs_since_improvement = 0
            new_lr = current_lr * self.factor
            logger.info("Validation metric plateaued at %.4f; lr %.3g -> %.3g", self.best_metric, current_lr, new_lr)
            return new_lr
        return current_lr


def scheduler_step(sched: PlateauScheduler, metric: float, current_lr: float) -> float:
    return sched.step(metric, current_lr)


def clip_grad_norm(grads: Sequence[Optional[np.ndarray]], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    present = [g for g in grads if g is not None]
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in present))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in present:
            g *= factor
    return total
