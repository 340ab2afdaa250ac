"""Random scale / translate / in-plane rotation augmentation.

Transforms act on voxel coordinates measured from the grid center: a voxel
offset ``v`` becomes ``v * s + t`` and is then rotated by ``theta`` in the XY
plane; z is left unchanged by the rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import JointSet
from .voxelize import VoxelGrid

SCALE_RANGE = (0.7, 1.2)
TRANSLATION_RANGE = (-7.0, 7.0)  # voxels
ANGLE_RANGE = (-40.0, 40.0)  # degrees


@dataclass(frozen=True)
class AugmentParams:
    scale: float = 1.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angle: float = 0.0  # degrees

    def __post_init__(self):
        t = tuple(float(v) for v in self.translation)
        object.__setattr__(self, "translation", t)
        if not SCALE_RANGE[0] <= self.scale <= SCALE_RANGE[1]:
            raise ValueError(f"scale {self.scale} outside {SCALE_RANGE}")
        if len(t) != 3 or not all(TRANSLATION_RANGE[0] <= v <= TRANSLATION_RANGE[1] for v in t):
            raise ValueError(f"translation {t} outside {TRANSLATION_RANGE} voxels")
        if not ANGLE_RANGE[0] <= self.angle <= ANGLE_RANGE[1]:
            raise ValueError(f"angle {self.angle} outside {ANGLE_RANGE} degrees")

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and self.translation == (0.0, 0.0, 0.0) and self.angle == 0.0


IDENTITY = AugmentParams()


def sample_params(seed: int) -> AugmentParams:
    rng = np.random.default_rng(seed)
    scale = rng.uniform(*SCALE_RANGE)
    translation = tuple(rng.uniform(*TRANSLATION_RANGE, size=3))
    angle = rng.uniform(*ANGLE_RANGE)
    return AugmentParams(float(scale), translation, float(angle))


def _rotation(angle_deg: float) -> np.ndarray:
    th = np.deg2rad(angle_deg)
    return np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])


def transform(v, scale: float, translation, angle_deg: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Scale, translate, then rotate in XY about ``center``; no range checks."""
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    d = (v - c) * scale + np.asarray(translation, dtype=np.float64)
    out = d.copy()
    out[..., :2] = d[..., :2] @ _rotation(angle_deg).T
    return out + c


def inverse_transform(v, scale: float, translation, angle_deg: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    d = v - c
    d[..., :2] = d[..., :2] @ _rotation(-angle_deg).T
    return (d - np.asarray(translation, dtype=np.float64)) / scale + c


def apply(v, params: AugmentParams, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    return transform(v, params.scale, params.translation, params.angle, center)


def augment_points(points: np.ndarray, params: AugmentParams, center, pitch: float) -> np.ndarray:
    """Apply ``params`` to mm points, with translation counted in voxels of ``pitch``."""
    if params.is_identity:
        return np.asarray(points, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    v = (np.asarray(points, dtype=np.float64) - c) / pitch
    return apply(v, params) * pitch + c


def augment_grid(grid: VoxelGrid, params: AugmentParams) -> VoxelGrid:
    """Resample by pulling each output voxel center back through the inverse map."""
    if params.is_identity:
        return grid
    size = np.array(grid.size)
    axes = [np.arange(s) + 0.5 for s in grid.size]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    src = inverse_transform(centers, params.scale, params.translation, params.angle, size / 2.0)
    idx = np.floor(src).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < size), axis=-1)
    occ = np.zeros(grid.size, np.uint8)
    hit = idx[inside]
    occ[inside] = grid.occupancy[hit[:, 0], hit[:, 1], hit[:, 2]]
    return VoxelGrid(occ, grid.pitch, grid.origin)


def augment_joints(joints: JointSet, params: AugmentParams, grid_frame: VoxelGrid) -> JointSet:
    return JointSet(augment_points(joints.joints, params, grid_frame.center, grid_frame.pitch))
