"""Binary occupancy grids built from point clouds."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import TargetTooLarge
from .geometry import PointCloud

HAND_GRID_SIZE = 96
INPUT_SIZE = 88
# full-scene diagnostic grid: 200 voxels of 10 mm per axis
SCENE_GRID_SIZE = 200
SCENE_PITCH_MM = 10.0

_DUMP_HEADER = struct.Struct("<3i4d")


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    occupancy: np.ndarray  # uint8 (Gx, Gy, Gz), values in {0, 1}
    pitch: float
    origin: np.ndarray  # mm coordinates of the (0, 0, 0) voxel corner

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 3:
            raise ValueError(f"occupancy must be 3-D, got shape {occ.shape}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        if occ.dtype != np.uint8:
            if np.any((occ != 0) & (occ != 1)):
                raise ValueError("occupancy values must be 0 or 1")
            occ = occ.astype(np.uint8)
        occ.setflags(write=False)
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        origin.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def size(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.occupancy.shape)

    @property
    def center(self) -> np.ndarray:
        return self.origin + np.array(self.size) * self.pitch / 2.0

    def as_input(self, dtype=np.float32) -> np.ndarray:
        """Occupancy as a 1 x D x H x W float array, (x, y, z) -> (D, H, W)."""
        return self.occupancy.astype(dtype)[None]

    def __eq__(self, other):
        return (isinstance(other, VoxelGrid) and self.pitch == other.pitch
                and np.array_equal(self.origin, other.origin) and np.array_equal(self.occupancy, other.occupancy))


def grid_origin(center, size: int, pitch: float) -> np.ndarray:
    return np.asarray(center, dtype=np.float64) - size * pitch / 2.0


def voxelize(cloud: PointCloud | np.ndarray, center, size: int, pitch: float) -> VoxelGrid:
    """Mark voxel ``floor((p - origin) / pitch)`` for every point inside the cube."""
    if size < 1 or not pitch > 0:
        raise ValueError(f"need size >= 1 and pitch > 0, got size={size}, pitch={pitch}")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    origin = grid_origin(center, size, pitch)
    occ = np.zeros((size, size, size), np.uint8)
    if len(pts):
        idx = np.floor((pts - origin) / pitch).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < size), axis=1)
        idx = idx[inside]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return VoxelGrid(occ, pitch, origin)


def scene_grid(cloud: PointCloud, center) -> VoxelGrid:
    return voxelize(cloud, center, SCENE_GRID_SIZE, SCENE_PITCH_MM)


def crop_offsets(size, target: int, mode: str = "center", seed: int | None = None) -> tuple[int, int, int]:
    size = tuple(size)
    if any(target > s for s in size) or target < 1:
        raise TargetTooLarge(f"cannot crop {target}^3 from grid of size {size}")
    if mode == "center":
        return tuple((s - target) // 2 for s in size)
    if mode == "random":
        if seed is None:
            raise ValueError("random crop needs a seed")
        rng = np.random.default_rng(seed)
        return tuple(int(rng.integers(0, s - target + 1)) for s in size)
    raise ValueError(f"unknown crop mode {mode!r}")


def crop_grid(grid: VoxelGrid, target: int, mode: str = "center", seed: int | None = None,
              offsets=None) -> VoxelGrid:
    """Contiguous ``target``^3 window; ``mode`` is ``"center"`` or ``"random"`` (seeded)."""
    if offsets is None:
        offsets = crop_offsets(grid.size, target, mode, seed)
    ox, oy, oz = offsets
    if any(o < 0 or o + target > s for o, s in zip(offsets, grid.size)):
        raise TargetTooLarge(f"window {offsets}+{target} outside grid of size {grid.size}")
    occ = grid.occupancy[ox:ox + target, oy:oy + target, oz:oz + target]
    return VoxelGrid(occ.copy(), grid.pitch, grid.origin + np.array(offsets) * grid.pitch)


def occupancy_count(grid: VoxelGrid) -> int:
    return int(np.count_nonzero(grid.occupancy))


def dump_grid(grid: VoxelGrid) -> bytes:
    """Header (3 x int32 size, float64 pitch, 3 x float64 origin) + x-fastest bit payload."""
    bits = np.packbits(grid.occupancy.transpose(2, 1, 0).ravel(), bitorder="little")
    return _DUMP_HEADER.pack(*grid.size, grid.pitch, *grid.origin) + bits.tobytes()


def load_grid_dump(data: bytes) -> VoxelGrid:
    gx, gy, gz, pitch, ox, oy, oz = _DUMP_HEADER.unpack_from(data)
    n = gx * gy * gz
    bits = np.unpackbits(np.frombuffer(data, np.uint8, offset=_DUMP_HEADER.size), count=n, bitorder="little")
    return VoxelGrid(bits.reshape(gz, gy, gx).transpose(2, 1, 0), pitch, (ox, oy, oz))


def write_grid(path, grid: VoxelGrid) -> None:
    Path(path).write_bytes(dump_grid(grid))
