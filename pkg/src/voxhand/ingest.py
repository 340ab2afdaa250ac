"""MSRA hand-gesture dataset I/O and a synthetic hand generator.

Binary frame layout (little-endian)::

    int32 width, height, left, top, right, bottom
    float32[(right - left) * (bottom - top)]   depth in mm, row-major, 0 = no return

``joint.txt`` holds a frame count on its first line followed by one line of
63 reals (x y z for 21 joints) per frame.
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CountMismatch, DatasetMissing, MalformedHeader, ParseError, TruncatedFile

HEADER = struct.Struct("<6i")

NUM_JOINTS = 21
FINGERS = ("index", "middle", "ring", "little", "thumb")
JOINT_NAMES = ("wrist",) + tuple(f"{f}_{j}" for f in FINGERS for j in ("mcp", "pip", "dip", "tip"))

MSRA_GESTURES = ("1", "2", "3", "4", "5", "6", "7", "8", "9", "I", "IP", "L", "MP", "RP", "T", "TIP", "Y")
MSRA_SUBJECTS = tuple(f"P{i}" for i in range(9))


@dataclass(frozen=True)
class CameraIntrinsics:
    fp: float
    fq: float
    cp: float = 0.0
    cq: float = 0.0

    def __post_init__(self):
        if not (self.fp > 0 and self.fq > 0):
            raise ValueError(f"focal lengths must be positive, got fp={self.fp}, fq={self.fq}")


@dataclass(frozen=True, eq=False)
class JointSet:
    """F x 3 joint coordinates in mm, camera frame (positive z into the scene)."""

    joints: np.ndarray

    def __post_init__(self):
        j = np.array(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise ValueError(f"joints must be F x 3, got shape {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValueError("joint coordinates must be finite")
        j.setflags(write=False)
        object.__setattr__(self, "joints", j)

    @property
    def F(self) -> int:
        return self.joints.shape[0]

    def __eq__(self, other):
        return isinstance(other, JointSet) and np.array_equal(self.joints, other.joints)


@dataclass(frozen=True, eq=False)
class DepthFrame:
    width: int
    height: int
    bbox: tuple[int, int, int, int]  # left, top, right, bottom
    depth: np.ndarray  # (bottom - top, right - left) float32, mm
    intrinsics: CameraIntrinsics
    subject_id: str = ""
    gesture_id: str = ""
    frame_index: int = 0
    joints: JointSet | None = field(default=None, compare=False)

    def __post_init__(self):
        left, top, right, bottom = (int(v) for v in self.bbox)
        if self.width <= 0 or self.height <= 0:
            raise MalformedHeader(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= left <= right <= self.width and 0 <= top <= bottom <= self.height):
            raise MalformedHeader(f"bbox {self.bbox} outside {self.width}x{self.height} image")
        d = np.array(self.depth, dtype=np.float32).reshape(bottom - top, right - left)
        if np.any(~np.isfinite(d)) or np.any(d < 0):
            raise ValueError("depth values must be finite and non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "bbox", (left, top, right, bottom))

    def with_depth(self, depth: np.ndarray) -> "DepthFrame":
        return DepthFrame(self.width, self.height, self.bbox, depth, self.intrinsics,
                          self.subject_id, self.gesture_id, self.frame_index, self.joints)

    def full_image(self) -> np.ndarray:
        """Depth as a (height, width) image with zeros outside the bbox."""
        img = np.zeros((self.height, self.width), np.float32)
        left, top, right, bottom = self.bbox
        img[top:bottom, left:right] = self.depth
        return img


_FRAME_NAME = re.compile(r"(\d+)_depth\.bin$")


def _ids_from_path(path: Path) -> tuple[str, str, int]:
    m = _FRAME_NAME.search(path.name)
    index = int(m.group(1)) if m else 0
    return path.parent.parent.name, path.parent.name, index


def parse_msra_frame(data: bytes, intrinsics: CameraIntrinsics, subject_id="", gesture_id="",
                     frame_index=0) -> DepthFrame:
    if len(data) < HEADER.size:
        raise TruncatedFile(f"{len(data)} bytes is shorter than the {HEADER.size}-byte header")
    width, height, left, top, right, bottom = HEADER.unpack_from(data)
    if width <= 0 or height <= 0 or right < left or bottom < top:
        raise MalformedHeader(f"bad header {(width, height, left, top, right, bottom)}")
    if left < 0 or top < 0 or right > width or bottom > height:
        raise MalformedHeader(f"bbox {(left, top, right, bottom)} outside {width}x{height} image")
    count = (right - left) * (bottom - top)
    payload = len(data) - HEADER.size
    if payload != 4 * count:
        raise TruncatedFile(f"expected {count} float32 depth values, payload holds {payload} bytes")
    depth = np.frombuffer(data, dtype="<f4", count=count, offset=HEADER.size)
    return DepthFrame(width, height, (left, top, right, bottom), depth.reshape(bottom - top, right - left),
                      intrinsics, subject_id, gesture_id, frame_index)


def load_msra_frame(path, intrinsics: CameraIntrinsics) -> DepthFrame:
    path = Path(path)
    subject, gesture, index = _ids_from_path(path)
    return parse_msra_frame(path.read_bytes(), intrinsics, subject, gesture, index)


def serialize_msra_frame(frame: DepthFrame) -> bytes:
    return HEADER.pack(frame.width, frame.height, *frame.bbox) + frame.depth.astype("<f4").tobytes()


def write_msra_frame(path, frame: DepthFrame) -> None:
    Path(path).write_bytes(serialize_msra_frame(frame))


def load_msra_joints(path, y_sign: float = -1.0, z_sign: float = -1.0) -> list[JointSet]:
    """Read ``joint.txt``; y and z are multiplied by the given signs.

    The dataset release stores y up and z negative; the default pair maps
    that into the y-down, z-forward frame used by the pixel projection.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty joint file")
    try:
        count = int(lines[0].strip())
    except ValueError as exc:
        raise ParseError(f"{path}: bad frame count {lines[0]!r}") from exc
    if len(lines) - 1 != count:
        raise CountMismatch(f"{path}: header says {count} frames, found {len(lines) - 1}")
    flip = np.array([1.0, y_sign, z_sign])
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if len(tokens) != 3 * NUM_JOINTS:
            raise ParseError(f"{path}:{lineno}: expected {3 * NUM_JOINTS} values, got {len(tokens)}")
        try:
            vals = np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if not np.all(np.isfinite(vals)):
            raise ParseError(f"{path}:{lineno}: non-finite joint coordinate")
        out.append(JointSet(vals.reshape(NUM_JOINTS, 3) * flip))
    return out


def write_msra_joints(path, joint_sets: Sequence[JointSet], y_sign: float = -1.0, z_sign: float = -1.0) -> None:
    flip = np.array([1.0, y_sign, z_sign])
    rows = [str(len(joint_sets))]
    for js in joint_sets:
        rows.append(" ".join(f"{v:.6f}" for v in (js.joints * flip).ravel()))
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------- synthetic


def _rot2(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _synth_skeleton(rng: np.random.Generator) -> tuple[np.ndarray, float, np.ndarray]:
    """Hand-local joints (x right, y up, z toward camera negative) in mm."""
    palm_r = rng.uniform(34.0, 44.0)
    joints = np.zeros((NUM_JOINTS, 3))
    joints[0] = (0.0, -0.85 * palm_r, 0.0)
    # base angle, base distance factor, segment lengths for index..little, thumb
    layout = [(-0.45, 1.0, (42, 25, 20)), (-0.12, 1.05, (46, 28, 22)), (0.2, 1.0, (43, 26, 21)),
              (0.5, 0.9, (34, 20, 18)), (-1.35, 0.8, (36, 30, 26))]
    lengths = []
    for f, (base_angle, reach, segs) in enumerate(layout):
        base_angle += rng.uniform(-0.06, 0.06)
        scale = rng.uniform(0.9, 1.1)
        curl = rng.uniform(0.0, 1.1)  # radians of total flexion toward the camera
        spread = rng.uniform(-0.15, 0.15)
        direction = np.array([np.sin(base_angle + spread), np.cos(base_angle + spread)])
        if f == 4:
            mcp = np.array([-0.75 * palm_r, -0.35 * palm_r])
            direction = np.array([np.sin(base_angle + spread) * 0.6 - 0.4, np.cos(base_angle + spread) + 0.9])
            direction /= np.linalg.norm(direction)
        else:
            mcp = reach * palm_r * np.array([np.sin(base_angle), np.cos(base_angle)])
        pos = np.array([mcp[0], mcp[1], 0.0])
        base = 1 + 4 * f
        joints[base] = pos
        bend = 0.0
        for k, seg in enumerate(segs):
            bend += curl / 3.0
            step = seg * scale
            planar = step * np.cos(bend)
            pos = pos + np.array([direction[0] * planar, direction[1] * planar, -step * np.sin(bend)])
            joints[base + k + 1] = pos
            lengths.append(step)
    return joints, palm_r, np.array(lengths)


def _render(points: np.ndarray, intr: CameraIntrinsics, width: int, height: int) -> np.ndarray:
    """Z-buffer a dense surface point sample into a depth image."""
    u = np.round(points[:, 0] / points[:, 2] * intr.fp + intr.cp).astype(np.int64)
    v = np.round(points[:, 1] / points[:, 2] * intr.fq + intr.cq).astype(np.int64)
    ok = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    img = np.full(height * width, np.inf)
    np.minimum.at(img, v[ok] * width + u[ok], points[ok, 2])
    img[~np.isfinite(img)] = 0.0
    return img.reshape(height, width)


def synth_frame(seed: int, intrinsics: CameraIntrinsics, width: int = 320, height: int = 240,
                subject_id: str = "synthetic", gesture_id: str = "0", frame_index: int = 0
                ) -> tuple[DepthFrame, JointSet]:
    """A palm blob with five finger capsules, plus matching 21-joint ground truth.

    Depths stay within 400-800 mm; identical seeds give bit-identical output.
    """
    rng = np.random.default_rng(seed)
    local, palm_r, _ = _synth_skeleton(rng)
    roll = rng.uniform(-0.5, 0.5)
    z0 = rng.uniform(520.0, 680.0)
    # hand center projects near the image center
    half_w = min(intrinsics.cp, width - intrinsics.cp) if intrinsics.cp > 0 else width / 2
    half_h = min(intrinsics.cq, height - intrinsics.cq) if intrinsics.cq > 0 else height / 2
    px = intrinsics.cp + rng.uniform(-0.25, 0.25) * half_w if intrinsics.cp > 0 else width / 2
    py = intrinsics.cq + rng.uniform(-0.2, 0.2) * half_h if intrinsics.cq > 0 else height / 2
    center = np.array([(px - intrinsics.cp) / intrinsics.fp * z0, (py - intrinsics.cq) / intrinsics.fq * z0, z0])

    rot = _rot2(roll)

    def to_camera(p):
        p = np.atleast_2d(p)
        xy = p[:, :2] @ rot.T
        # local y points up, camera y points down
        return np.column_stack([xy[:, 0], -xy[:, 1], p[:, 2]]) + center

    # palm: an elliptical slab bulging slightly toward the camera
    step = 1.0
    gx, gy = np.meshgrid(np.arange(-palm_r * 1.05, palm_r * 1.05, step),
                         np.arange(-palm_r * 1.0, palm_r * 1.1, step), indexing="ij")
    inside = (gx / (palm_r * 1.05)) ** 2 + ((gy - 0.05 * palm_r) / (palm_r * 1.05)) ** 2 <= 1.0
    gx, gy = gx[inside], gy[inside]
    bulge = -12.0 * (1.0 - (gx / (palm_r * 1.05)) ** 2 - ((gy - 0.05 * palm_r) / (palm_r * 1.05)) ** 2)
    surface = [np.column_stack([gx, gy, bulge])]

    radius = 8.0
    for f in range(5):
        chain = local[[1 + 4 * f, 2 + 4 * f, 3 + 4 * f, 4 + 4 * f]]
        if f == 4:
            chain = np.vstack([local[0] * 0.3 + np.array([-0.5 * palm_r, 0.0, 0.0]), chain])
        for a, b in zip(chain[:-1], chain[1:]):
            seg = b - a
            length = np.linalg.norm(seg)
            n = max(int(length / 0.8), 2)
            ts = np.linspace(0.0, 1.0, n)
            axis = a[None, :] + ts[:, None] * seg[None, :]
            planar = seg[:2] / (np.linalg.norm(seg[:2]) + 1e-9)
            side = np.array([-planar[1], planar[0]])
            offs = np.arange(-radius, radius + 0.5, 0.8)
            ax = np.repeat(axis, len(offs), axis=0)
            o = np.tile(offs, len(axis))
            depth_off = -np.sqrt(np.clip(radius ** 2 - o ** 2, 0.0, None))
            surface.append(np.column_stack([ax[:, 0] + side[0] * o, ax[:, 1] + side[1] * o, ax[:, 2] + depth_off]))
        # rounded tip cap
        tip = chain[-1]
        cx, cy = np.meshgrid(np.arange(-radius, radius + 0.5, 0.8), np.arange(-radius, radius + 0.5, 0.8))
        disk = cx ** 2 + cy ** 2 <= radius ** 2
        cx, cy = cx[disk], cy[disk]
        surface.append(np.column_stack([tip[0] + cx, tip[1] + cy,
                                        tip[2] - np.sqrt(np.clip(radius ** 2 - cx ** 2 - cy ** 2, 0.0, None))]))
    # forearm stub below the wrist so the silhouette reads as a hand
    fx, fy = np.meshgrid(np.arange(-0.6 * palm_r, 0.6 * palm_r, step), np.arange(-1.6 * palm_r, -0.85 * palm_r, step))
    surface.append(np.column_stack([fx.ravel(), fy.ravel(), np.full(fx.size, 4.0)]))

    pts = to_camera(np.vstack(surface))
    img = _render(pts, intrinsics, width, height).astype(np.float32)
    rows = np.flatnonzero(img.any(axis=1))
    cols = np.flatnonzero(img.any(axis=0))
    margin = 3
    top, bottom = max(rows[0] - margin, 0), min(rows[-1] + 1 + margin, height)
    left, right = max(cols[0] - margin, 0), min(cols[-1] + 1 + margin, width)
    joints = JointSet(to_camera(local))
    frame = DepthFrame(width, height, (int(left), int(top), int(right), int(bottom)),
                       img[top:bottom, left:right], intrinsics, subject_id, gesture_id, frame_index, joints)
    return frame, joints


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def write_synthetic_dataset(root, intrinsics: CameraIntrinsics, subjects: int = 9, gestures: Sequence[str] = ("1", "2"),
                            frames_per_gesture: int = 4, seed: int = 0, y_sign: float = -1.0,
                            z_sign: float = -1.0) -> Path:
    """Write synthetic frames in the MSRA directory layout under ``root``."""
    root = Path(root)
    for s in range(subjects):
        for g_idx, gesture in enumerate(gestures):
            gdir = root / f"P{s}" / gesture
            gdir.mkdir(parents=True, exist_ok=True)
            joint_sets = []
            for i in range(frames_per_gesture):
                frame, joints = synth_frame(derive_seed(seed, s, g_idx, i), intrinsics,
                                            subject_id=f"P{s}", gesture_id=gesture, frame_index=i)
                write_msra_frame(gdir / f"{i:06d}_depth.bin", frame)
                joint_sets.append(joints)
            write_msra_joints(gdir / "joint.txt", joint_sets, y_sign, z_sign)
    return root


def list_subjects(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetMissing(f"dataset root {str(root)!r} does not exist")
    return sorted(p.name for p in root.iterdir() if p.is_dir() and any(p.glob("*/joint.txt")))


def load_subject(root, subject: str, intrinsics: CameraIntrinsics, max_frames: int | None = None,
                 y_sign: float = -1.0, z_sign: float = -1.0) -> list[DepthFrame]:
    """Frames for one subject, each carrying its ground-truth joints."""
    sdir = Path(root) / subject
    if not sdir.is_dir():
        raise DatasetMissing(f"subject directory {str(sdir)!r} does not exist")
    frames: list[DepthFrame] = []
    for gdir in sorted(p for p in sdir.iterdir() if (p / "joint.txt").exists()):
        joints = load_msra_joints(gdir / "joint.txt", y_sign, z_sign)
        for i, js in enumerate(joints):
            if max_frames is not None and len(frames) >= max_frames:
                return frames
            path = gdir / f"{i:06d}_depth.bin"
            if not path.exists():
                continue
            f = load_msra_frame(path, intrinsics)
            frames.append(DepthFrame(f.width, f.height, f.bbox, f.depth, intrinsics, subject, gdir.name, i, js))
    return frames


def load_dataset(root, subjects: Iterable[str] | None, intrinsics: CameraIntrinsics,
                 max_frames_per_subject: int | None = None, y_sign: float = -1.0,
                 z_sign: float = -1.0) -> list[DepthFrame]:
    root = Path(root)
    available = list_subjects(root)
    if not available:
        raise DatasetMissing(f"no subjects with joint.txt under {str(root)!r}")
    check_first_frame(root, intrinsics)
    frames = []
    for s in (available if subjects is None else subjects):
        frames.extend(load_subject(root, s, intrinsics, max_frames_per_subject, y_sign, z_sign))
    return frames


def check_first_frame(root, intrinsics: CameraIntrinsics) -> None:
    """Fail loudly if the first frame file does not match the expected layout."""
    for dirpath, _, files in sorted(os.walk(root)):
        bins = sorted(f for f in files if f.endswith("_depth.bin"))
        if bins:
            load_msra_frame(Path(dirpath) / bins[0], intrinsics)
            return
    raise DatasetMissing(f"no *_depth.bin files under {str(root)!r}")
