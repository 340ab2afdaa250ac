"""Hand segmentation, pinhole back-projection and reference-point localization."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud, EmptyFrame
from .ingest import CameraIntrinsics, DepthFrame

DEFAULT_BAND_MM = 400.0
DEFAULT_OFFSET_CLAMP_MM = 150.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (n, 3) mm

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self):
        return self.points.shape[0]


class ReferenceSource(enum.Enum):
    CenterOfMass = "center_of_mass"
    Refined = "refined"


@dataclass(frozen=True)
class ReferencePoint:
    position: tuple[float, float, float]
    source: ReferenceSource

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(np.isfinite(pos)):
            raise ValueError(f"reference point must be a finite 3-vector, got {self.position}")
        object.__setattr__(self, "position", pos)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.position)


def project_pixel_to_world(p, q, depth, intr: CameraIntrinsics):
    """Pinhole back-projection; with a zero principal point this is ``(p/fp*D, q/fq*D, D)``.

    Accepts scalars or equally shaped arrays.
    """
    x = (np.asarray(p, dtype=np.float64) - intr.cp) / intr.fp * depth
    y = (np.asarray(q, dtype=np.float64) - intr.cq) / intr.fq * depth
    z = np.asarray(depth, dtype=np.float64)
    if np.ndim(x) == 0:
        return float(x), float(y), float(z)
    return x, y, z


def project_world_to_pixel(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Inverse of :func:`project_pixel_to_world` for z > 0; returns (n, 3) of (p, q, depth)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    return np.column_stack([pts[:, 0] * intr.fp / z + intr.cp, pts[:, 1] * intr.fq / z + intr.cq, z])


def project_frame(frame: DepthFrame) -> PointCloud:
    left, top, _, _ = frame.bbox
    rows, cols = np.nonzero(frame.depth > 0)
    d = frame.depth[rows, cols].astype(np.float64)
    x, y, z = project_pixel_to_world(cols + left, rows + top, d, frame.intrinsics)
    return PointCloud(np.column_stack([x, y, z]))


def segment_hand(frame: DepthFrame, band_mm: float = DEFAULT_BAND_MM) -> DepthFrame:
    """Keep depths within ``[z_min, z_min + band_mm]`` of the nearest surface."""
    if not band_mm > 0:
        raise ValueError(f"band_mm must be positive, got {band_mm}")
    d = frame.depth
    positive = d > 0
    if not positive.any():
        raise EmptyFrame(f"frame {frame.subject_id}/{frame.gesture_id}/{frame.frame_index} has no depth returns")
    z_min = d[positive].min()
    keep = positive & (d <= z_min + np.float32(band_mm))
    return frame.with_depth(np.where(keep, d, np.float32(0.0)))


def center_of_mass(cloud: PointCloud) -> np.ndarray:
    if len(cloud) == 0:
        raise EmptyCloud("center of mass of an empty point cloud")
    return cloud.points.mean(axis=0)


def crop_cube(cloud: PointCloud, center, half_extent: float) -> PointCloud:
    if not half_extent > 0:
        raise ValueError(f"half_extent must be positive, got {half_extent}")
    c = np.asarray(center, dtype=np.float64)
    keep = np.all(np.abs(cloud.points - c) <= half_extent, axis=1)
    return PointCloud(cloud.points[keep])


def localizer_crop(frame: DepthFrame, com, size: int = 96, half_extent: float = 150.0) -> np.ndarray:
    """Square depth crop around the projected CoM, normalized to [-1, 1].

    The window spans ``half_extent`` mm at the CoM depth; depth is expressed
    relative to the CoM in units of ``half_extent``.  Empty pixels read as 1
    (far), as does everything outside the image.
    """
    com = np.asarray(com, dtype=np.float64)
    intr = frame.intrinsics
    u0, v0, z0 = project_world_to_pixel(com, intr)[0]
    half_u = half_extent * intr.fp / z0
    half_v = half_extent * intr.fq / z0
    steps = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    us = np.floor(u0 + steps * half_u).astype(np.int64)
    vs = np.floor(v0 + steps * half_v).astype(np.int64)
    img = frame.full_image()
    valid_u = (us >= 0) & (us < frame.width)
    valid_v = (vs >= 0) & (vs < frame.height)
    crop = np.zeros((size, size), np.float32)
    crop[np.ix_(valid_v, valid_u)] = img[np.ix_(vs[valid_v], us[valid_u])]
    out = np.clip((crop - z0) / half_extent, -1.0, 1.0)
    out[crop <= 0] = 1.0
    return out.astype(np.float32)


def clamp_offset(offset, limit: float) -> np.ndarray:
    offset = np.asarray(offset, dtype=np.float64)
    norm = np.linalg.norm(offset)
    if norm > limit:
        offset = offset * (limit / norm)
    return offset


def refine_reference(frame: DepthFrame, com, localizer, clamp_mm: float = DEFAULT_OFFSET_CLAMP_MM,
                     half_extent: float = 150.0) -> ReferencePoint:
    """Shift the CoM by the localizer's predicted offset (norm clamped to ``clamp_mm``)."""
    from .models import forward_localizer

    crop = localizer_crop(frame, com, localizer.cfg.input_size, half_extent)
    offset = forward_localizer(localizer, crop[None, None])[0]
    offset = clamp_offset(offset, clamp_mm)
    return ReferencePoint(tuple(np.asarray(com, dtype=np.float64) + offset), ReferenceSource.Refined)
