"""Catalog of operating-condition presets for the synthetic generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import yaml

from .config import GenConfig
from .errors import ArgumentError

logger = logging.getLogger("gearfault.presets")

DEFAULT_CATALOG = Path(__file__).resolve().parent / "resources" / "presets.yaml"


@dataclass
class OperatingPreset:
    """Generator parameters describing one (motor speed, load) condition."""

    id: str
    name: str
    description: str
    motor_rpm: float
    load_nm: float
    base_freqs_hz: List[float]
    class_channel_stddev: List[List[float]]
    harmonic_amps: List[float]
    tags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "motor_rpm": self.motor_rpm,
            "load_nm": self.load_nm,
            "base_freqs_hz": list(self.base_freqs_hz),
            "class_channel_stddev": [list(row) for row in self.class_channel_stddev],
            "harmonic_amps": list(self.harmonic_amps),
            "tags": list(self.tags),
        }


def load_preset_catalog(path: Optional[Path] = None) -> Dict[str, OperatingPreset]:
    """Load presets from a YAML manifest (the bundled one by default)."""
    catalog: Dict[str, OperatingPreset] = {}
    manifest_path = Path(path) if path is not None else DEFAULT_CATALOG
    if not manifest_path.exists():
        logger.warning("Preset manifest %s not found", manifest_path)
        return catalog

    with manifest_path.open("r", encoding="utf-8") as f:
        manifest = yaml.safe_load(f) or {}

    for entry in manifest.get("presets", []):
        try:
            preset_id = entry["id"]
            catalog[preset_id] = OperatingPreset(
                id=preset_id,
                name=entry.get("name", preset_id),
                description=entry.get("description", ""),
                motor_rpm=float(entry["motor_rpm"]),
                load_nm=float(entry["load_nm"]),
                base_freqs_hz=[float(f) for f in entry["base_freqs_hz"]],
                class_channel_stddev=[[float(s) for s in row] for row in entry["class_channel_stddev"]],
                harmonic_amps=[float(a) for a in entry.get("harmonic_amps", [0.6, 0.3, 0.15])],
                tags=entry.get("tags", []),
            )
        except (KeyError, TypeError, ValueError) as e:
            logger.warning("Skipping malformed preset entry %r: %s", entry.get("id"), e)
            continue

    return catalog


def preset_gen_config(
    preset: OperatingPreset,
    samples_per_class: int = 100,
    seed: int = 0,
    series_length: int = 200,
) -> GenConfig:
    """Build a validated GenConfig from ``preset``."""
    num_classes = len(preset.base_freqs_hz)
    if not preset.class_channel_stddev:
        raise ArgumentError(f"preset {preset.id} has no stddev matrix")
    return GenConfig(
        num_classes=num_classes,
        samples_per_class=samples_per_class,
        series_length=series_length,
        num_channels=len(preset.class_channel_stddev[0]),
        base_freqs_hz=preset.base_freqs_hz,
        class_channel_stddev=preset.class_channel_stddev,
        harmonic_amps=preset.harmonic_amps,
        seed=seed,
    )


def get_preset(preset_id: str, path: Optional[Path] = None) -> OperatingPreset:
    catalog = load_preset_catalog(path)
    if preset_id not in catalog:
        raise ArgumentError(f"unknown preset '{preset_id}'; available: {', '.join(sorted(catalog))}")
    return catalog[preset_id]
