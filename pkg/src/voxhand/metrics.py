"""Joint-error metrics and the evaluation report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LengthMismatch
from .ingest import JOINT_NAMES, JointSet

REPORT_SCHEMA_VERSION = 1
PER_JOINT_COLUMNS = ("joint_index", "joint_name", "mean_error_mm")
CURVE_COLUMNS = ("threshold_mm", "fraction")


def default_thresholds(max_mm: float = 100.0, step_mm: float = 2.0) -> list[float]:
    """``step, 2*step, ..., max``; zero is left out since nothing is strictly below it."""
    return [float(t) for t in np.arange(step_mm, max_mm + step_mm / 2, step_mm)]


def _stack(joints) -> np.ndarray:
    if isinstance(joints, np.ndarray):
        arr = joints.astype(np.float64)
    else:
        arr = np.array([j.joints if isinstance(j, JointSet) else np.asarray(j) for j in joints], dtype=np.float64)
    return arr.reshape(len(arr), -1, 3)


def joint_distances(preds, truths) -> np.ndarray:
    p, t = _stack(preds), _stack(truths)
    if p.shape != t.shape:
        raise LengthMismatch(f"predictions {p.shape} vs ground truth {t.shape}")
    return np.linalg.norm(p - t, axis=-1)


def mean_joint_error(preds, truths) -> tuple[np.ndarray, float]:
    """Per-joint mean Euclidean error over frames, and the mean of those."""
    d = joint_distances(preds, truths)
    if d.shape[0] == 0:
        raise LengthMismatch("no frames to evaluate")
    per_joint = d.mean(axis=0)
    return per_joint, float(per_joint.mean())


def success_fraction_curve(preds, truths, thresholds: Sequence[float]) -> list[tuple[float, float]]:
    """Fraction of frames whose worst joint error is strictly below each threshold."""
    th = np.asarray(thresholds, dtype=np.float64)
    if np.any(th <= 0) or np.any(np.diff(th) < 0):
        raise ValueError("thresholds must be positive and sorted")
    worst = joint_distances(preds, truths).max(axis=1)
    if worst.size == 0:
        raise LengthMismatch("no frames to evaluate")
    return [(float(d), float(np.mean(worst < d))) for d in th]


@dataclass
class EvalReport:
    per_joint_mean_error: list[float]
    overall_mean_error: float
    success_curve: list[tuple[float, float]]
    frames_evaluated: int
    wall_time_per_frame: float = float("nan")  # ms, network forward only
    joint_names: list[str] = field(default_factory=lambda: list(JOINT_NAMES))

    @classmethod
    def from_predictions(cls, preds, truths, thresholds, wall_time_per_frame=float("nan"),
                         joint_names=None) -> "EvalReport":
        per_joint, overall = mean_joint_error(preds, truths)
        curve = success_fraction_curve(preds, truths, thresholds)
        names = list(joint_names) if joint_names is not None else list(JOINT_NAMES)
        if len(names) != len(per_joint):
            names = [f"joint_{i}" for i in range(len(per_joint))]
        return cls([float(v) for v in per_joint], overall, curve, len(_stack(preds)), wall_time_per_frame, names)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "frames_evaluated": self.frames_evaluated,
            "overall_mean_error_mm": self.overall_mean_error,
            "per_joint_mean_error_mm": dict(zip(self.joint_names, self.per_joint_mean_error)),
            "success_curve": [{"threshold_mm": t, "fraction": f} for t, f in self.success_curve],
        }
        if include_timing:
            d["wall_time_per_frame_ms"] = self.wall_time_per_frame
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2)

    def per_joint_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PER_JOINT_COLUMNS)
        for i, (name, err) in enumerate(zip(self.joint_names, self.per_joint_mean_error)):
            w.writerow([i, name, repr(err)])
        return buf.getvalue()

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for t, f in self.success_curve:
            w.writerow([repr(t), repr(f)])
        return buf.getvalue()
