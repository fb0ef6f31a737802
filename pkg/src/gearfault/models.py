"""
The two deep classifiers and their shared training loop.

* :class:`MSResNet` - shared convolution stem, three residual branches with
  kernel sizes 3/5/7, per-branch global average pooling, concatenated
  embedding and a dense classifier. Trained with cross-entropy plus a
  batch-hard triplet loss on the concatenated embedding.
* :class:`LSTMFCN` - three convolution blocks with global average pooling in
  parallel with an LSTM over the dimension-shuffled series; both streams are
  concatenated into a dense classifier. Trained with cross-entropy.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np
from scipy.special import softmax

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import LSTMFCNConfig, MSResNetConfig, TrainConfig
from .dataset import Dataset, resample_dataset
from .ensemble import ProbabilityMatrix
from .errors import ArgumentError, DimensionError, TrainingError
from .fileio import PathLike
from .layers import LSTM, BatchNorm1d, Conv1d, Dense, Dropout, Module
from .optim import AdamState, PlateauScheduler, adam_step, clip_grad_norm

logger = logging.getLogger("gearfault.models")

EVAL_BATCH = 256

# Choices the method description leaves open; stored with every checkpoint.
UNSPECIFIED_CHOICES = {
    "msresnet_stem": "conv(k=stem_kernel_size, stem_filters, stride 2, same) + batchnorm + maxpool(3, stride 2, pad 1)",
    "msresnet_branch_widths": "branch_widths per block; kernel-1 projection shortcut when channels change",
    "triplet": "batch-hard mining, Euclidean distance, applied to the concatenated embedding",
    "lstm_input": "dimension shuffle: LSTM reads num_channels steps of series_length-dimensional vectors",
    "init": "fan-in uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)); LSTM uses fan_in = hidden size",
    "optimizer": "Adam(0.9, 0.999, eps 1e-8), no weight decay, global grad-norm clipping",
    "scheduler": "reduce on plateau of validation accuracy (mode max)",
    "batching": "seeded shuffle each epoch; a trailing batch of one sample joins the previous batch",
}


@dataclass
class ModelOutput:
    logits: Tensor
    embedding: Tensor
    branch_embeddings: List[Tensor] = field(default_factory=list)


class Network(Module):
    """Base class: knows how to shape a dataset for itself and score a batch."""

    arch = ""

    def __init__(self, in_channels: int, dtype: str):
        super().__init__()
        self.in_channels = in_channels
        self.dtype = np.dtype(dtype)

    def prepare(self, dataset: Dataset) -> np.ndarray:
        if dataset.num_channels != self.in_channels:
            raise DimensionError(f"{self.arch} built for {self.in_channels} channels, data has {dataset.num_channels}")
        return dataset.values.astype(self.dtype)

    def loss(self, output: ModelOutput, labels: np.ndarray) -> Tensor:
        return ad.cross_entropy(output.logits, labels)

    def config_dict(self) -> Dict[str, Any]:
        raise NotImplementedError

    def geometry(self) -> Dict[str, Any]:
        return {"in_channels": self.in_channels, "dtype": self.dtype.name}


# ---------------------------------------------------------------------------
# Multi-scale residual network
# ---------------------------------------------------------------------------

class ResidualBlock(Module):
    """``relu(bn(conv(x))) + shortcut(x)``."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng, dtype):
        super().__init__()
        self.conv = self.add_module("conv", Conv1d(in_channels, out_channels, kernel_size, rng, dtype=dtype))
        self.bn = self.add_module("bn", BatchNorm1d(out_channels, dtype=dtype))
        self.shortcut = None
        if in_channels != out_channels:
            self.shortcut = self.add_module(
                "shortcut", Conv1d(in_channels, out_channels, 1, rng, bias=False, dtype=dtype)
            )

    def forward(self, x: Tensor) -> Tensor:
        out = ad.relu(self.bn(self.conv(x)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return ad.add(out, skip)


class Branch(Module):
    def __init__(self, in_channels: int, widths: List[int], kernel_size: int, rng, dtype):
        super().__init__()
        self.blocks: List[ResidualBlock] = []
        for b, width in enumerate(widths):
            self.blocks.append(self.add_module(f"block{b}", ResidualBlock(in_channels, width, kernel_size, rng, dtype)))
            in_channels = width

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return ad.global_avg_pool1d(x)


class MSResNet(Network):
    arch = "msresnet"

    def __init__(self, config: MSResNetConfig, in_channels: int = 3, dtype: str = "float32"):
        super().__init__(in_channels, dtype)
        if config.input_length < config.stem_kernel_size:
            raise ArgumentError(
                f"input_length {config.input_length} is shorter than the stem kernel ({config.stem_kernel_size})"
            )
        self.config = config
        rng = np.random.default_rng([config.seed, 0])
        dt = self.dtype
        self.stem_conv = self.add_module(
            "stem_conv", Conv1d(in_channels, config.stem_filters, config.stem_kernel_size, rng, stride=2, dtype=dt)
        )
        self.stem_bn = self.add_module("stem_bn", BatchNorm1d(config.stem_filters, dtype=dt))
        self.branches = [
            self.add_module(f"branch{i}", Branch(config.stem_filters, config.branch_widths, k, rng, dt))
            for i, k in enumerate(config.branch_kernel_sizes)
        ]
        self.head = self.add_module("head", Dense(config.concat_dim, config.num_classes, rng, dtype=dt))

    def prepare(self, dataset: Dataset) -> np.ndarray:
        return super().prepare(resample_dataset(dataset, self.config.input_length))

    def stem(self, x: Tensor) -> Tensor:
        return ad.maxpool1d(self.stem_bn(self.stem_conv(x)), 3, stride=2, padding=1)

    def forward(self, x: Tensor) -> ModelOutput:
        if x.shape[1:] != (self.in_channels, self.config.input_length):
            raise DimensionError(
                f"msresnet expects (N, {self.in_channels}, {self.config.input_length}), got {x.shape}"
            )
        shared = self.stem(x)
        pooled = [branch(shared) for branch in self.branches]
        embedding = ad.concat(pooled, axis=1)
        return ModelOutput(self.head(embedding), embedding, pooled)

    def loss(self, output: ModelOutput, labels: np.ndarray) -> Tensor:
        ce = ad.cross_entropy(output.logits, labels)
        if self.config.triplet_weight == 0:
            return ce
        if not ad.has_valid_triplet(labels):
            logger.debug("Batch has no valid triplet; using cross-entropy only")
            return ce
        triplet = ad.triplet_margin_loss(output.embedding, labels, self.config.triplet_margin)
        return ad.add(ce, ad.scale(triplet, self.config.triplet_weight))

    def config_dict(self) -> Dict[str, Any]:
        return self.config.model_dump(mode="json")


def build_msresnet(config: MSResNetConfig, in_channels: int = 3, dtype: str = "float32") -> MSResNet:
    return MSResNet(config, in_channels, dtype)


# ---------------------------------------------------------------------------
# LSTM-FCN
# ---------------------------------------------------------------------------

class LSTMFCN(Network):
    arch = "lstmfcn"

    def __init__(self, config: LSTMFCNConfig, in_channels: int = 3, series_length: int = 200, dtype: str = "float32"):
        super().__init__(in_channels, dtype)
        if series_length < max(config.conv_kernel_sizes):
            raise ArgumentError(f"series_length {series_length} is shorter than the largest conv kernel")
        self.config = config
        self.series_length = series_length
        rng = np.random.default_rng([config.seed, 0])
        dt = self.dtype
        self.convs: List[Conv1d] = []
        self.norms: List[BatchNorm1d] = []
        channels = in_channels
        for b, (filters, k) in enumerate(zip(config.conv_filters, config.conv_kernel_sizes)):
            self.convs.append(self.add_module(f"conv{b}", Conv1d(channels, filters, k, rng, dtype=dt)))
            self.norms.append(self.add_module(f"bn{b}", BatchNorm1d(filters, dtype=dt)))
            channels = filters
        self.lstm = self.add_module("lstm", LSTM(series_length, config.lstm_hidden, rng, dtype=dt))
        self.dropout = self.add_module("dropout", Dropout(config.dropout_p, np.random.default_rng([config.seed, 2])))
        self.head = self.add_module(
            "head", Dense(config.conv_filters[-1] + config.lstm_hidden, config.num_classes, rng, dtype=dt)
        )

    def fcn(self, x: Tensor) -> Tensor:
        for conv, norm in zip(self.convs, self.norms):
            x = ad.relu(norm(conv(x)))
        return ad.global_avg_pool1d(x)

    def recurrent(self, x: Tensor) -> Tensor:
        return self.dropout(self.lstm(ad.dimension_shuffle(x)))

    def forward(self, x: Tensor) -> ModelOutput:
        if x.shape[1:] != (self.in_channels, self.series_length):
            raise DimensionError(f"lstmfcn expects (N, {self.in_channels}, {self.series_length}), got {x.shape}")
        conv_features = self.fcn(x)
        lstm_features = self.recurrent(x)
        embedding = ad.concat([conv_features, lstm_features], axis=1)
        return ModelOutput(self.head(embedding), embedding, [conv_features, lstm_features])

    def config_dict(self) -> Dict[str, Any]:
        return self.config.model_dump(mode="json")

    def geometry(self) -> Dict[str, Any]:
        return {**super().geometry(), "series_length": self.series_length}


def build_lstmfcn(
    config: LSTMFCNConfig, in_channels: int = 3, series_length: int = 200, dtype: str = "float32"
) -> LSTMFCN:
    return LSTMFCN(config, in_channels, series_length, dtype)


def build_model(arch: str, config: Dict[str, Any], geometry: Dict[str, Any]) -> Network:
    if arch == MSResNet.arch:
        return MSResNet(MSResNetConfig.model_validate(config), geometry["in_channels"], geometry["dtype"])
    if arch == LSTMFCN.arch:
        return LSTMFCN(
            LSTMFCNConfig.model_validate(config),
            geometry["in_channels"],
            geometry["series_length"],
            geometry["dtype"],
        )
    raise ArgumentError(f"unknown architecture '{arch}'")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainedModel:
    arch: str
    model: Network
    history: List[EpochRecord]
    best_epoch: int
    train_seconds: float
    run_config: Dict[str, Any] = field(default_factory=dict)

    @property
    def best_val_accuracy(self) -> float:
        return self.history[self.best_epoch - 1].val_accuracy

    def metadata(self) -> Dict[str, Any]:
        return {
            "arch": self.arch,
            "config": self.model.config_dict(),
            "geometry": self.model.geometry(),
            "history": [asdict(h) for h in self.history],
            "best_epoch": self.best_epoch,
            "train_seconds": self.train_seconds,
            "run_config": self.run_config,
            "unspecified_choices": UNSPECIFIED_CHOICES,
        }

    def save(self, path: PathLike):
        return save_checkpoint(path, self.model.state_dict(), self.metadata())

    @classmethod
    def load(cls, path: PathLike) -> "TrainedModel":
        state, meta = load_checkpoint(path)
        model = build_model(meta["arch"], meta["config"], meta["geometry"])
        model.load_state_dict(state)
        model.eval()
        return cls(
            arch=meta["arch"],
            model=model,
            history=[EpochRecord(**h) for h in meta["history"]],
            best_epoch=int(meta["best_epoch"]),
            train_seconds=float(meta["train_seconds"]),
            run_config=meta.get("run_config", {}),
        )


def make_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffled mini-batches; a final batch of one sample is merged into the one before."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def train_step(
    model: Network, x: np.ndarray, y: np.ndarray, state: AdamState, grad_clip_norm: float
) -> float:
    """Forward, backward, clip and one Adam update on a single batch; returns the loss."""
    model.train()
    model.zero_grad()
    with Graph() as graph:
        output = model(Tensor(x))
        loss = model.loss(output, y)
        value = loss.item()
        if not np.isfinite(value):
            return value
        graph.backward(loss)
    params = model.parameters()
    grads = [p.grad for p in params]
    clip_grad_norm(grads, grad_clip_norm)
    adam_step(params, grads, state)
    return value


def forward_logits(model: Network, x: np.ndarray) -> np.ndarray:
    """Eval-mode logits in batches, without recording a graph."""
    model.eval()
    chunks = [model(Tensor(x[i : i + EVAL_BATCH])).logits.data for i in range(0, x.shape[0], EVAL_BATCH)]
    return np.concatenate(chunks).astype(np.float64)


def _probabilities(model: Network, x: np.ndarray) -> np.ndarray:
    return softmax(forward_logits(model, x), axis=1)


def accuracy(model: Network, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(_probabilities(model, x), axis=1) == y))


def train(
    model: Network,
    train_set: Dataset,
    val_set: Dataset,
    train_config: Optional[TrainConfig] = None,
    epochs: int = 100,
    lr: float = 0.001,
    seed: int = 0,
    run_config: Optional[Dict[str, Any]] = None,
) -> TrainedModel:
    """Train ``model`` and keep the parameters of the best validation epoch.

    Raises:
        ArgumentError: If a split is empty or too small for batch norm
        TrainingError: If the loss becomes non-finite (names the epoch)
    """
    train_config = train_config or TrainConfig()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ArgumentError("train and validation splits must be non-empty")
    if len(train_set) < 2:
        raise ArgumentError("training needs at least 2 samples (batch norm)")
    if epochs < 1:
        raise ArgumentError(f"epochs must be positive, got {epochs}")

    started = time.perf_counter()
    x_train, y_train = model.prepare(train_set), train_set.labels
    x_val, y_val = model.prepare(val_set), val_set.labels
    shuffle_rng = np.random.default_rng([seed, 1])
    state = AdamState(lr=lr)
    scheduler = PlateauScheduler(
        factor=train_config.scheduler_factor,
        patience=train_config.scheduler_patience,
        min_delta=train_config.scheduler_min_delta,
    )
    history: List[EpochRecord] = []
    best_accuracy, best_epoch, best_state = -1.0, 0, None

    for epoch in range(1, epochs + 1):
        total, count = 0.0, 0
        for batch in make_batches(len(y_train), train_config.batch_size, shuffle_rng):
            loss = train_step(model, x_train[batch], y_train[batch], state, train_config.grad_clip_norm)
            if not np.isfinite(loss):
                raise TrainingError(f"{model.arch}: loss became {loss} in epoch {epoch}", epoch=epoch)
            total += loss * len(batch)
            count += len(batch)
        val_accuracy = accuracy(model, x_val, y_val)
        history.append(EpochRecord(epoch, total / count, val_accuracy, state.lr))
        if val_accuracy > best_accuracy:
            best_accuracy, best_epoch, best_state = val_accuracy, epoch, model.state_dict()
        logger.info(
            "%s epoch %d/%d: loss %.4f, val acc %.4f, lr %.3g",
            model.arch,
            epoch,
            epochs,
            total / count,
            val_accuracy,
            state.lr,
        )
        state.lr = scheduler.step(val_accuracy, state.lr)

    model.load_state_dict(best_state)
    model.eval()
    seconds = time.perf_counter() - started
    logger.info("%s trained in %.1fs; best epoch %d (val acc %.4f)", model.arch, seconds, best_epoch, best_accuracy)
    return TrainedModel(model.arch, model, history, best_epoch, seconds, run_config or {})


def predict_proba(trained: Union[TrainedModel, Network], dataset: Dataset) -> ProbabilityMatrix:
    model = trained.model if isinstance(trained, TrainedModel) else trained
    probs = _probabilities(model, model.prepare(dataset))
    return ProbabilityMatrix(probs, model.arch, dataset.source_indices, dataset.labels)
