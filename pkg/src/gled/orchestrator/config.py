"""Run configuration: a versioned JSON schema with one preset per flow case.

Unknown keys are rejected everywhere so that a typo cannot silently fall back
to a default hyperparameter.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigurationError, PersistenceError
from ..kssolver import KsConfig
from ..scalespace import RestrictionSpec

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class KsSection(_Strict):
    domain_length: float = 22.0
    grid_points: int = 64
    viscosity: float = 1.0
    micro_step: float = 0.025
    macro_step: float = 0.25
    burn_in: float = 50.0
    horizon: float = 96.0
    n_train: int = Field(500, ge=1)
    n_valid: int = Field(50, ge=1)
    n_test: int = Field(50, ge=0)

    def solver(self) -> KsConfig:
        return KsConfig(self.domain_length, self.grid_points, self.viscosity, self.micro_step, self.macro_step).validate()


class IngestSection(_Strict):
    """External snapshots (one file per stored state)."""

    paths: list[str] = Field(default_factory=list)
    dims: list[int] = Field(default_factory=list)
    step: float = 1.0
    dtype: Literal["f4", "f8"] = "f8"


class RestrictionSection(_Strict):
    micro_shape: list[int]
    macro_shape: list[int]
    mode: Literal["subsample", "linear_interpolate", "block_average"] = "subsample"
    periodic: list[bool] = Field(default_factory=list)

    def spec(self) -> RestrictionSpec:
        return RestrictionSpec(tuple(self.micro_shape), tuple(self.macro_shape), self.mode, tuple(self.periodic))


class DiffusionSection(_Strict):
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    noise_steps: int = Field(20, ge=2)
    conv_layers: int = 4
    channels: int = 32
    kernel: int = 5
    embed_width: int = 32
    epochs: int = Field(20, ge=1)
    steps_per_epoch: int = Field(200, ge=1)
    batch_size: int = Field(128, ge=1)
    lr: float = 1e-3
    clip_norm: float | None = 1.0


class AttentionSection(_Strict):
    d_z: int
    window: int = Field(ge=1)
    layers: int = Field(ge=1)
    heads: int = Field(ge=1)
    d_model: int = 128
    ffn_mult: int = 4
    activation: Literal["relu"] = "relu"
    ln_eps: float = 1e-5
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(8, ge=1)
    lr: float = 3e-4
    clip_norm: float | None = 1.0
    input_noise: float = Field(0.0, ge=0.0)
    max_batches_per_epoch: int | None = None


class GuidanceSection(_Strict):
    # "zero_mean" pins the spatial mean of each decoded state to 0 (KS conserves it)
    residual: Literal["none", "reynolds_stress", "zero_mean"] = "none"
    beta_guide: float = Field(1.0, ge=0.0)
    sigma_guide: float = Field(0.002, gt=0.0)
    sigma_r: float = Field(1.0, gt=0.0)


class ForecastSection(_Strict):
    warmup_time: float = 16.0
    prediction_time: float = 80.0
    n_rollouts: int = Field(50, ge=1)
    decode_batch: int = Field(512, ge=1)


class SeedSection(_Strict):
    data: int = 0
    decoder: int = 1
    propagator: int = 2
    sampling: int = 3


class RunConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    case: Literal["ks", "bfs2d", "channel3d"]
    ks: KsSection | None = None
    ingest: IngestSection | None = None
    macro_step: float
    restriction: RestrictionSection
    diffusion: DiffusionSection = Field(default_factory=DiffusionSection)
    attention: AttentionSection
    guidance: GuidanceSection = Field(default_factory=GuidanceSection)
    forecast: ForecastSection = Field(default_factory=ForecastSection)
    seeds: SeedSection = Field(default_factory=SeedSection)
    out_dir: str = "runs/ks"

    @model_validator(mode="after")
    def _consistent(self):
        spec = self.restriction.spec()  # raises on inconsistent shapes
        if self.attention.d_z != spec.macro_size:
            raise ValueError(f"attention.d_z={self.attention.d_z} but the macro state has {spec.macro_size} entries")
        if self.attention.d_model % self.attention.heads:
            raise ValueError("attention.d_model must be divisible by attention.heads")
        if self.case == "ks":
            if self.ks is None:
                raise ValueError("case 'ks' needs a 'ks' section")
            if tuple(self.restriction.micro_shape) != (self.ks.grid_points,):
                raise ValueError("restriction.micro_shape must equal (ks.grid_points,)")
            if not math.isclose(self.macro_step, self.ks.macro_step):
                raise ValueError("macro_step must equal ks.macro_step")
        if self.guidance.residual == "reynolds_stress" and len(self.restriction.micro_shape) != 3:
            raise ValueError("the reynolds_stress residual needs 3D micro states")
        return self

    @property
    def warmup_steps(self) -> int:
        return int(round(self.forecast.warmup_time / self.macro_step))

    @property
    def prediction_steps(self) -> int:
        return int(round(self.forecast.prediction_time / self.macro_step))

    def snapshot(self) -> dict:
        return self.model_dump(mode="json")


def preset(case: str) -> RunConfig:
    """Default configuration per case; model hyperparameters follow the published table."""
    if case == "ks":
        return RunConfig(
            case="ks",
            ks=KsSection(),
            macro_step=0.25,
            restriction=RestrictionSection(micro_shape=[64], macro_shape=[16], mode="subsample", periodic=[True]),
            attention=AttentionSection(d_z=16, window=512, layers=8, heads=4),
            out_dir="runs/ks",
        )
    if case == "bfs2d":
        return RunConfig(
            case="bfs2d",
            ingest=IngestSection(dims=[512, 512], step=0.05),
            macro_step=0.05,
            restriction=RestrictionSection(
                micro_shape=[512, 512], macro_shape=[32, 32], mode="subsample", periodic=[False, False]
            ),
            attention=AttentionSection(d_z=32 * 32, window=40, layers=8, heads=4),
            forecast=ForecastSection(warmup_time=2.0, prediction_time=10.0, n_rollouts=1),
            out_dir="runs/bfs2d",
        )
    if case == "channel3d":
        return RunConfig(
            case="channel3d",
            ingest=IngestSection(dims=[3, 40, 50, 30], step=4.0),
            macro_step=4.0,
            restriction=RestrictionSection(
                micro_shape=[40, 50, 30], macro_shape=[8, 32, 8], mode="linear_interpolate", periodic=[True, False, True]
            ),
            attention=AttentionSection(d_z=8 * 32 * 8, window=20, layers=2, heads=1),
            guidance=GuidanceSection(residual="reynolds_stress"),
            forecast=ForecastSection(warmup_time=80.0, prediction_time=360.0, n_rollouts=1),
            out_dir="runs/channel3d",
        )
    raise ConfigurationError(f"unknown case {case!r}; expected ks, bfs2d or channel3d")


def _wrap(exc: ValidationError) -> ConfigurationError:
    first = exc.errors()[0]
    loc = ".".join(str(p) for p in first["loc"]) or "<root>"
    return ConfigurationError(f"{loc}: {first['msg']} ({exc.error_count()} error(s))")


def from_dict(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise _wrap(exc) from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise PersistenceError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigurationError(f"{path}: unsupported schema_version {doc.get('schema_version')}")
    return from_dict(doc)


def save_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.snapshot(), indent=2, sort_keys=True) + "\n")
    return path


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Return a validated copy with dotted-path overrides, e.g. ``{"attention.epochs": 5}``."""
    doc = cfg.snapshot()
    for dotted, value in changes.items():
        if value is None:
            continue
        node = doc
        *head, leaf = dotted.split(".")
        for key in head:
            if node.get(key) is None:
                raise ConfigurationError(f"cannot override {dotted}: section {key!r} is absent")
            node = node[key]
        node[leaf] = value
    return from_dict(doc)
