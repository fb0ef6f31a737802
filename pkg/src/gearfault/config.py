"""
Run configuration using Pydantic.

Every stage of the pipeline reads its settings from one of the models below;
``RunConfig`` collects them so a run can be reproduced from a single resolved
JSON document.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger("gearfault.config")

NUM_KERNELS = 84
DEFAULT_ALPHAS = [10.0**k for k in range(-3, 4)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GenConfig(_Section):
    """Synthetic planetary-gearbox vibration generator settings.

    ``base_freqs_hz`` and ``class_channel_stddev`` are filled with defaults
    sized to ``num_classes``/``num_channels`` when omitted.
    """
    num_classes: int = Field(5, gt=0)
    samples_per_class: int = Field(100, gt=0)
    series_length: int = Field(200, gt=1)
    num_channels: int = Field(3, gt=0)
    base_freqs_hz: Optional[List[float]] = None
    class_channel_stddev: Optional[List[List[float]]] = None
    harmonic_amps: List[float] = Field(default_factory=lambda: [0.6, 0.3, 0.15])
    sampling_rate_hz: float = Field(10000.0, gt=0)
    seed: int = Field(0, ge=0)
    # per-channel stddev orderings across classes must be strict
    strict_ordering: bool = True

    @model_validator(mode="after")
    def _fill_and_check(self) -> "GenConfig":
        k, c = self.num_classes, self.num_channels
        if self.base_freqs_hz is None:
            object.__setattr__(self, "base_freqs_hz", [250.0 + 80.0 * i for i in range(k)])
        if self.class_channel_stddev is None:
            # class 0 loudest; channel spread grows x -> y -> z
            grid = [[round((1.0 + 0.1 * (k - 1 - i)) * (1.0 + 0.15 * j), 6) for j in range(c)] for i in range(k)]
            object.__setattr__(self, "class_channel_stddev", grid)
        if len(self.base_freqs_hz) != k:
            raise ValueError(f"base_freqs_hz needs {k} entries, got {len(self.base_freqs_hz)}")
        if any(f <= 0 for f in self.base_freqs_hz):
            raise ValueError("base_freqs_hz must be positive")
        if any(a < 0 for a in self.harmonic_amps):
            raise ValueError("harmonic_amps must be non-negative")
        std = self.class_channel_stddev
        if len(std) != k or any(len(row) != c for row in std):
            raise ValueError(f"class_channel_stddev must be a {k}x{c} matrix")
        if any(s <= 0 for row in std for s in row):
            raise ValueError("class_channel_stddev entries must be > 0")
        for j in range(c if self.strict_ordering else 0):
            column = [std[i][j] for i in range(k)]
            if len(set(column)) != k:
                raise ValueError(f"class_channel_stddev column {j} has ties; orderings must be strict")
        return self


class SplitConfig(_Section):
    num_folds: int = Field(5, gt=0)
    fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = Field(0, ge=0)
    stratified: bool = True


class TransformConfig(_Section):
    """MiniRocket transform settings; ``num_features`` is forced to a multiple of 84."""
    num_features: int = Field(9996, gt=0)
    max_dilations_per_kernel: int = Field(32, gt=0)
    padding: Literal["alternate", "none"] = "alternate"
    n_jobs: int = Field(1, gt=0)
    seed: int = Field(0, ge=0)

    @field_validator("num_features")
    @classmethod
    def _multiple_of_kernels(cls, value: int) -> int:
        return max(NUM_KERNELS, (value // NUM_KERNELS) * NUM_KERNELS)


class RidgeConfig(_Section):
    alphas: List[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    temperature: float = Field(1.0, gt=0)
    tune_temperature: bool = False

    @field_validator("alphas")
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if not value or any(a <= 0 for a in value):
            raise ValueError("alphas must be a non-empty list of positive reals")
        return value


class TrainConfig(_Section):
    """Settings shared by both deep models' training loops."""
    batch_size: int = Field(64, gt=1)
    grad_clip_norm: float = Field(5.0, gt=0)
    scheduler_patience: int = Field(10, gt=0)
    scheduler_factor: float = Field(0.1, gt=0, lt=1)
    scheduler_min_delta: float = Field(1e-4, ge=0)
    dtype: Literal["float32", "float64"] = "float32"


class MSResNetConfig(_Section):
    input_length: int = Field(512, gt=0)
    branch_kernel_sizes: List[int] = Field(default_factory=lambda: [3, 5, 7])
    blocks_per_branch: int = Field(3, gt=0)
    stem_filters: int = Field(64, gt=0)
    stem_kernel_size: int = Field(7, gt=0)
    branch_widths: List[int] = Field(default_factory=lambda: [64, 128, 256])
    branch_out_dim: int = Field(256, gt=0)
    concat_dim: int = Field(768, gt=0)
    num_classes: int = Field(5, gt=1)
    epochs: int = Field(100, gt=0)
    lr: float = Field(0.001, gt=0)
    triplet_margin: float = Field(1.0, ge=0)
    triplet_weight: float = Field(1.0, ge=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _dims(self) -> "MSResNetConfig":
        if len(self.branch_kernel_sizes) != 3:
            raise ValueError("branch_kernel_sizes must list three kernel sizes")
        if len(self.branch_widths) != self.blocks_per_branch:
            raise ValueError("branch_widths needs one width per block")
        if self.branch_widths[-1] != self.branch_out_dim:
            raise ValueError("the last branch width must equal branch_out_dim")
        if self.concat_dim != 3 * self.branch_out_dim:
            raise ValueError("concat_dim must equal 3 x branch_out_dim")
        return self


class LSTMFCNConfig(_Section):
    conv_filters: List[int] = Field(default_factory=lambda: [128, 256, 128])
    conv_kernel_sizes: List[int] = Field(default_factory=lambda: [8, 5, 3])
    lstm_hidden: int = Field(8, gt=0)
    dropout_p: float = Field(0.8, ge=0, lt=1)
    num_classes: int = Field(5, gt=1)
    epochs: int = Field(100, gt=0)
    lr: float = Field(0.001, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _three_blocks(self) -> "LSTMFCNConfig":
        if len(self.conv_filters) != 3 or len(self.conv_kernel_sizes) != 3:
            raise ValueError("LSTM-FCN has exactly three convolution blocks")
        return self


class RunConfig(_Section):
    """Complete configuration of a run (union of the module configs)."""
    seed: int = Field(0, ge=0)
    out: str = "runs"
    gen: GenConfig = Field(default_factory=GenConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    minirocket: TransformConfig = Field(default_factory=TransformConfig)
    ridge: RidgeConfig = Field(default_factory=RidgeConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    msresnet: MSResNetConfig = Field(default_factory=MSResNetConfig)
    lstmfcn: LSTMFCNConfig = Field(default_factory=LSTMFCNConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        """Return a copy where ``seed`` drives every seeded section."""
        data = self.model_dump()
        data["seed"] = seed
        for section in ("gen", "split", "minirocket", "msresnet", "lstmfcn"):
            data[section]["seed"] = seed
        return RunConfig.model_validate(data)

    def resolved(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def write_resolved(self, path: os.PathLike | str) -> Path:
        from .fileio import write_json

        return write_json(path, self.resolved())


def config_hash(section: BaseModel | Dict[str, Any]) -> str:
    """Short SHA-256 of the canonical JSON form of a config section."""
    data = section.model_dump(mode="json") if isinstance(section, BaseModel) else section
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def load_config(config_path: str | os.PathLike) -> RunConfig:
    """Load a run configuration from a JSON (or YAML) file.

    Args:
        config_path: Path to the configuration file

    Returns:
        Parsed RunConfig object

    Raises:
        FileNotFoundError: If the configuration file doesn't exist
        ValueError: If the configuration is invalid
    """
    path = Path(config_path)
    env_file = path.parent / ".env"
    if env_file.exists():
        load_dotenv(env_file)
        logger.debug("Loaded environment variables from %s", env_file)
    elif Path(".env").exists():
        load_dotenv(".env")
        logger.debug("Loaded environment variables from .env")

    if not path.exists():
        raise FileNotFoundError(f"Configuration file {path} not found")

    with open(path, "r", encoding="utf-8") as f:
        # ${VAR} references are expanded before parsing
        content = os.path.expandvars(f.read())
        data = yaml.safe_load(content) or {}

    if not isinstance(data, dict):
        raise ValueError(f"Invalid configuration in {path}: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except Exception as e:
        raise ValueError(f"Invalid configuration in {path}: {e}") from e
