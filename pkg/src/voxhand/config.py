"""Run configuration: one flat dataclass, loadable from a key-value YAML file.

A bare :class:`TrainConfig` reproduces the published recipe: Adam at
3e-4, mini-batches of 4, 3 epochs, N(0, 0.005^2) kernel init.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigInvalid
from .ingest import JOINT_NAMES, CameraIntrinsics
from .models import HandNetConfig, LocalizerConfig


@dataclass
class TrainConfig:
    # optimization
    lr: float = 3.0e-4
    batch_size: int = 4
    epochs: int = 3
    seed: int = 0
    max_steps: int | None = None
    init_sigma: float = 0.005
    augment: bool = True
    workers: int = 1
    # data
    dataset_root: str = ""
    held_out_subject: str | None = None
    synthetic: bool = False
    synthetic_subjects: int = 9
    synthetic_gestures: int = 2
    synthetic_frames_per_gesture: int = 4
    max_frames_per_subject: int | None = None
    # camera (MSRA release values)
    fp: float = 241.42
    fq: float = 241.42
    cp: float = 160.0
    cq: float = 120.0
    y_sign: float = -1.0
    z_sign: float = -1.0
    joint_names: list[str] = field(default_factory=lambda: list(JOINT_NAMES))
    # localization and voxelization
    band_mm: float = 400.0
    half_extent_mm: float = 150.0
    grid_size: int = 96
    input_size: int = 88
    pitch_mm: float | None = None  # None: 2 * half_extent_mm / grid_size
    use_localizer: bool = True
    localizer_epochs: int = 3
    localizer_max_steps: int | None = None
    offset_clamp_mm: float = 150.0
    # network
    num_joints: int = 21
    dropout: float = 0.5
    coord_scale_mm: float = 150.0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    # evaluation
    threshold_max_mm: float = 100.0
    threshold_step_mm: float = 2.0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigInvalid(f"batch_size must be >= 2 for batch normalization, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigInvalid(f"lr must be positive, got {self.lr}")
        if self.input_size > self.grid_size:
            raise ConfigInvalid(f"input_size {self.input_size} exceeds grid_size {self.grid_size}")
        if self.epochs < 0 or self.workers < 1:
            raise ConfigInvalid("epochs must be >= 0 and workers >= 1")
        if not (self.band_mm > 0 and self.half_extent_mm > 0):
            raise ConfigInvalid("band_mm and half_extent_mm must be positive")
        if self.pitch_mm is not None and not self.pitch_mm > 0:
            raise ConfigInvalid(f"pitch_mm must be positive, got {self.pitch_mm}")
        if len(self.joint_names) != self.num_joints:
            raise ConfigInvalid(f"{len(self.joint_names)} joint names for {self.num_joints} joints")
        try:
            self.intrinsics
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc

    @property
    def pitch(self) -> float:
        return self.pitch_mm if self.pitch_mm is not None else 2.0 * self.half_extent_mm / self.grid_size

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fp, self.fq, self.cp, self.cq)

    def handnet_config(self) -> HandNetConfig:
        return HandNetConfig(input_size=self.input_size, num_joints=self.num_joints, dropout=self.dropout,
                             coord_scale_mm=self.coord_scale_mm, bn_momentum=self.bn_momentum, bn_eps=self.bn_eps)

    def localizer_config(self) -> LocalizerConfig:
        return LocalizerConfig()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: str(f.type) for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, value):
    # YAML reads "3e-4" as a string; coerce scalars by the declared type
    if value is None:
        return None
    kind = _FIELDS[name]
    try:
        if kind.startswith("bool"):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
        if kind.startswith("str"):
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{name}: cannot interpret {value!r} as {kind}") from exc
    return value


def config_from_dict(d: dict) -> TrainConfig:
    unknown = set(d) - set(_FIELDS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    try:
        return TrainConfig(**{k: _coerce(k, v) for k, v in d.items()})
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from exc


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file {str(path)!r} not found")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path}: expected key: value pairs")
    return config_from_dict(data)


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
