# -*- coding: utf-8 -*-
"""
Harness configuration

A configuration is a single JSON document overlaid on the packaged
``defaults.json`` (desk scale: 64x64 image, 32x32x4 grid, C=16, Mc=3).
Nested objects merge key by key; unknown keys are rejected.

    from oceanssc.config import load_config, load_preset
    config = load_config("experiment.json")
    full = load_preset("full")
"""

import json
import os
from logging import getLogger
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .geometry.camera import CameraModel, DepthBinning, GridSpec

log = getLogger(__name__)

SUPPORTED_SCALES = (4, 8, 16)
LIFT_SCALE = 8
DECODER_SEED = 4
MAX_INSTANCES = 8
THREADS_ENV = "OCEAN_THREADS"

# =============================================================================
# PACKAGE DATA
# =============================================================================

_here = os.path.dirname(os.path.abspath(__file__))


def _load_json(*parts) -> dict:
    with open(os.path.join(_here, *parts), "r") as f:
        return json.load(f)


def _load_defaults() -> dict:
    """Load the packaged desk-scale defaults."""
    return _load_json("defaults.json")


def available_presets() -> List[str]:
    return sorted(name[:-5] for name in os.listdir(os.path.join(_here, "presets"))
                  if name.endswith(".json"))


# =============================================================================
# MODELS
# =============================================================================

class CameraConfig(BaseModel):
    """Forward-looking pinhole mounted ``height`` metres above the ego origin."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    fx: float
    fy: float
    cx: float
    cy: float
    height: float

    def build(self) -> CameraModel:
        return CameraModel.looking_forward(self.fx, self.fy, self.cx, self.cy, self.height)


class InstanceRange(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    min: int = Field(ge=0, le=MAX_INSTANCES)
    max: int = Field(ge=0, le=MAX_INSTANCES)

    @model_validator(mode="after")
    def _ordered(self):
        if self.min > self.max:
            raise ValueError(f"instances.min ({self.min}) exceeds instances.max ({self.max})")
        return self


class HarnessConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    image_height: int = Field(gt=0)
    image_width: int = Field(gt=0)
    camera: CameraConfig
    grid: GridSpec
    binning: DepthBinning
    channels: int = Field(gt=0)
    feature_channels: Dict[int, int]
    context_channels: int = Field(gt=0)
    sam_channels: int = Field(gt=0)
    head_channels: int = Field(gt=0)
    num_classes: int = Field(gt=0)
    scales: List[int]
    layers: int = Field(ge=0)
    sampling_points: int = Field(gt=0)
    window: int = Field(gt=0)
    instances: InstanceRange
    feature_noise: float = Field(ge=0)
    lambda_depth: float = Field(ge=0)
    lambda_recon: float = Field(ge=0)
    tau: float = Field(gt=0)
    epsilon: float = Field(gt=0)
    gate_bias: float
    seed: int = Field(ge=0)
    lr: float = Field(ge=0)
    steps: int = Field(ge=0)
    weighted_denominator: bool
    gate_bypass: bool
    fusion: Literal["dynamic", "softmax", "sigmoid", "sum"]
    use_depth_similarity: bool
    use_gsga: bool
    use_ild: bool
    out_dir: str

    @model_validator(mode="after")
    def _consistent(self):
        scales = list(self.scales)
        if not scales or len(set(scales)) != len(scales):
            raise ValueError(f"scales must be a non-empty list without repeats, got {scales}")
        if not set(scales) <= set(SUPPORTED_SCALES) or LIFT_SCALE not in scales:
            raise ValueError(f"scales must be a subset of {SUPPORTED_SCALES} containing {LIFT_SCALE}")
        missing = [s for s in scales if s not in self.feature_channels]
        if missing:
            raise ValueError(f"feature_channels lacks an entry for scale(s) {missing}")
        if any(c <= 0 for c in self.feature_channels.values()):
            raise ValueError("feature_channels must all be positive")
        top = max(SUPPORTED_SCALES)
        if self.image_height % top or self.image_width % top:
            raise ValueError(
                f"image {self.image_height}x{self.image_width} is not divisible by scale {top}")
        x, y, _ = self.grid.dims
        if x % self.window or y % self.window:
            raise ValueError(f"grid {x}x{y} is not divisible by window {self.window}")
        n = decoder_depth(x)
        if n is None or y % (2 ** n):
            raise ValueError(
                f"grid {x}x{y} is not a power-of-two multiple of the {DECODER_SEED}-cell decoder seed")
        return self

    @property
    def scene_camera(self) -> CameraModel:
        return self.camera.build()

    @property
    def sorted_scales(self) -> List[int]:
        return sorted(self.scales)

    def feature_shape(self, scale: int):
        return self.image_height // scale, self.image_width // scale

    def with_overrides(self, **changes) -> "HarnessConfig":
        """Validated copy with top-level fields replaced."""
        data = self.model_dump()
        data.update(changes)
        return build_config(data)


def decoder_depth(x: int) -> Optional[int]:
    """Number of doubling layers from the seed map to ``x`` rows, or None."""
    if x < DECODER_SEED or x % DECODER_SEED:
        return None
    ratio = x // DECODER_SEED
    if ratio & (ratio - 1):
        return None
    return ratio.bit_length() - 1


# =============================================================================
# LOADING
# =============================================================================

def merge(base: dict, overlay: dict) -> dict:
    """Recursive key-by-key overlay; lists and scalars replace."""
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def build_config(data: dict) -> HarnessConfig:
    try:
        return HarnessConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def default_config(**changes) -> HarnessConfig:
    return build_config(merge(_load_defaults(), changes))


def load_config(path: Optional[str] = None, **changes) -> HarnessConfig:
    """
    Overlay the JSON document at ``path`` (and then ``changes``) on the defaults.

    Raises
    ------
    ConfigError
        If the file is unreadable, not a JSON object, or fails validation.
    """
    data = _load_defaults()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                overlay = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read configuration {path}: {e}") from e
        if not isinstance(overlay, dict):
            raise ConfigError(f"configuration {path} must be a JSON object")
        data = merge(data, overlay)
        log.debug(f"Loaded configuration from: {path}")
    return build_config(merge(data, changes))


def load_preset(name: str, **changes) -> HarnessConfig:
    if name not in available_presets():
        raise ConfigError(f"unknown preset {name!r} (available: {', '.join(available_presets())})")
    return build_config(merge(merge(_load_defaults(), _load_json("presets", f"{name}.json")), changes))


def threads() -> int:
    """Parallelism cap from ``OCEAN_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return max(value, 1)
