"""Per-frame preprocessing, the training loops, and evaluation."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import augment as aug
from .config import TrainConfig
from .errors import DatasetMissing, DivergedLoss, EmptyCloud, EmptyFrame, UnknownSubject
from .geometry import (ReferencePoint, ReferenceSource, center_of_mass, crop_cube, localizer_crop, project_frame,
                       refine_reference, segment_hand)
from .ingest import DepthFrame, derive_seed, list_subjects, load_subject, write_synthetic_dataset
from .metrics import EvalReport, default_thresholds
from .models import HandNet, Localizer, build_handnet, build_localizer, forward_handnet
from .nn import functional as F
from .nn.optim import Adam
from .nn.tensor import Tensor
from .voxelize import crop_grid, voxelize

log = logging.getLogger(__name__)


@dataclass
class Sample:
    grid: np.ndarray  # (1, S, S, S) float32
    center: np.ndarray  # mm, center of the cropped grid
    reference: ReferencePoint
    joints: np.ndarray | None  # (F, 3) mm, after augmentation


@dataclass
class LossRecord:
    step: int
    epoch: int
    loss: float


@dataclass
class TrainResult:
    model: HandNet
    history: list[LossRecord]
    localizer: Localizer | None = None
    localizer_history: list[LossRecord] | None = None


def locate_hand(frame: DepthFrame, cfg: TrainConfig, localizer: Localizer | None = None):
    """Segment, back-project and return (cloud cropped to the hand cube, reference point)."""
    seg = segment_hand(frame, cfg.band_mm)
    cloud = project_frame(seg)
    com = center_of_mass(cloud)
    if localizer is not None:
        ref = refine_reference(seg, com, localizer, cfg.offset_clamp_mm, cfg.half_extent_mm)
    else:
        ref = ReferencePoint(tuple(com), ReferenceSource.CenterOfMass)
    return crop_cube(cloud, ref.position, cfg.half_extent_mm), ref


def prepare_sample(frame: DepthFrame, cfg: TrainConfig, localizer: Localizer | None = None,
                   augment_seed: int | None = None) -> Sample:
    """Frame -> network input grid plus joints expressed in the same frame.

    With ``augment_seed`` the points and joints are augmented and the
    ``input_size`` window is cropped at a random offset; otherwise the
    window is centered.
    """
    cloud, ref = locate_hand(frame, cfg, localizer)
    center = ref.array
    points = cloud.points
    joints = None if frame.joints is None else frame.joints.joints
    if augment_seed is not None:
        params = aug.sample_params(augment_seed)
        points = aug.augment_points(points, params, center, cfg.pitch)
        if joints is not None:
            joints = aug.augment_points(joints, params, center, cfg.pitch)
    grid = voxelize(points, center, cfg.grid_size, cfg.pitch)
    if augment_seed is not None:
        grid = crop_grid(grid, cfg.input_size, "random", derive_seed(augment_seed, 1))
    else:
        grid = crop_grid(grid, cfg.input_size, "center")
    return Sample(grid.as_input(), grid.center, ref, joints)


def usable_frames(frames: Sequence[DepthFrame], cfg: TrainConfig) -> list[DepthFrame]:
    out = []
    for f in frames:
        try:
            locate_hand(f, cfg)
        except (EmptyFrame, EmptyCloud):
            log.warning("skipping empty frame %s/%s/%d", f.subject_id, f.gesture_id, f.frame_index)
            continue
        out.append(f)
    return out


def loso_split(subjects: Sequence[str], held_out: str) -> tuple[list[str], list[str]]:
    subjects = list(subjects)
    if held_out not in subjects:
        raise UnknownSubject(f"held-out subject {held_out!r} not in {subjects}")
    return [s for s in subjects if s != held_out], [held_out]


def resolve_dataset_root(cfg: TrainConfig, out_dir=None) -> str:
    """Dataset root, writing the synthetic corpus first when requested."""
    if cfg.synthetic:
        from pathlib import Path
        root = Path(cfg.dataset_root or Path(out_dir or ".") / "synthetic")
        if not list(root.glob("P*/*/joint.txt")):
            gestures = [str(g + 1) for g in range(cfg.synthetic_gestures)]
            write_synthetic_dataset(root, cfg.intrinsics, cfg.synthetic_subjects, gestures,
                                    cfg.synthetic_frames_per_gesture, cfg.seed, cfg.y_sign, cfg.z_sign)
        return str(root)
    if not cfg.dataset_root:
        raise DatasetMissing("no dataset_root configured (use --synthetic for generated data)")
    return cfg.dataset_root


def load_split(cfg: TrainConfig, out_dir=None) -> tuple[list[DepthFrame], list[DepthFrame]]:
    root = resolve_dataset_root(cfg, out_dir)
    subjects = list_subjects(root)
    if not subjects:
        raise DatasetMissing(f"no subjects under {root!r}")
    if cfg.held_out_subject is not None:
        train_s, test_s = loso_split(subjects, cfg.held_out_subject)
    else:
        train_s, test_s = subjects, []

    def load(ss):
        frames = []
        for s in ss:
            frames.extend(load_subject(root, s, cfg.intrinsics, cfg.max_frames_per_subject, cfg.y_sign, cfg.z_sign))
        return frames

    return load(train_s), load(test_s)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n - batch_size + 1, batch_size)]


def _check_loss(value: float, step: int) -> None:
    if not math.isfinite(value):
        raise DivergedLoss(step, value)


def train_localizer(cfg: TrainConfig, frames: Sequence[DepthFrame],
                    progress: Callable[[LossRecord], None] | None = None) -> tuple[Localizer, list[LossRecord]]:
    """Regress (mean of ground-truth joints - CoM) from a CoM-centered depth crop."""
    model = build_localizer(cfg.localizer_config(), seed=derive_seed(cfg.seed, 7), sigma=cfg.init_sigma)
    lcfg = model.cfg
    crops, targets = [], []
    for f in frames:
        seg = segment_hand(f, cfg.band_mm)
        com = center_of_mass(project_frame(seg))
        crops.append(localizer_crop(seg, com, lcfg.input_size, cfg.half_extent_mm))
        targets.append(f.joints.joints.mean(axis=0) - com)
    crops = np.stack(crops)[:, None]
    targets = np.stack(targets)
    if len(crops) < cfg.batch_size:
        raise DatasetMissing(f"localizer needs at least {cfg.batch_size} frames, got {len(crops)}")
    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(derive_seed(cfg.seed, 8))
    history: list[LossRecord] = []
    step = 0
    model.train()
    for epoch in range(cfg.localizer_epochs):
        for idx in _batches(len(crops), cfg.batch_size, rng):
            if cfg.localizer_max_steps is not None and step >= cfg.localizer_max_steps:
                return model, history
            out = model(Tensor(crops[idx]))
            loss = F.mse_joint_loss(out, targets[idx])
            _check_loss(loss.item(), step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            rec = LossRecord(step, epoch, loss.item())
            history.append(rec)
            if progress:
                progress(rec)
            step += 1
    return model, history


def train(cfg: TrainConfig, frames: Sequence[DepthFrame] | None = None, localizer: Localizer | None = None,
          progress: Callable[[LossRecord], None] | None = None, out_dir=None) -> TrainResult:
    """Fit the hand network with Adam on the joint MSE.

    Each step draws a mini-batch from a seeded per-epoch shuffle (the last
    partial batch is dropped), prepares the samples, runs forward/backward
    and applies one Adam update.  Per-sample augmentation seeds depend only
    on (seed, epoch, frame), so results do not depend on ``workers``.
    """
    if frames is None:
        frames, _ = load_split(cfg, out_dir)
    frames = usable_frames(frames, cfg)
    if len(frames) < cfg.batch_size:
        raise DatasetMissing(f"need at least {cfg.batch_size} usable frames, got {len(frames)}")
    if any(f.joints is None for f in frames):
        raise DatasetMissing("training frames must carry ground-truth joints")

    loc_history = None
    if cfg.use_localizer and localizer is None:
        localizer, loc_history = train_localizer(cfg, frames)

    model = build_handnet(cfg.handnet_config(), seed=cfg.seed, sigma=cfg.init_sigma)
    model.reseed_dropout(derive_seed(cfg.seed, 2))
    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(derive_seed(cfg.seed, 3))
    cache: dict[int, Sample] = {}

    def sample(args) -> Sample:
        i, epoch = args
        if cfg.augment:
            return prepare_sample(frames[i], cfg, localizer, derive_seed(cfg.seed, 4, epoch, i))
        if i not in cache:
            cache[i] = prepare_sample(frames[i], cfg, localizer)
        return cache[i]

    history: list[LossRecord] = []
    step = 0
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 and cfg.augment else None
    try:
        for epoch in range(cfg.epochs):
            for idx in _batches(len(frames), cfg.batch_size, rng):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                jobs = [(int(i), epoch) for i in idx]
                samples = list(pool.map(sample, jobs)) if pool else [sample(j) for j in jobs]
                x = np.stack([s.grid for s in samples])
                target = np.stack([s.joints - s.center for s in samples])
                model.train()
                out = model(Tensor(x))
                loss = F.mse_joint_loss(out, target)
                _check_loss(loss.item(), step)
                opt.zero_grad()
                loss.backward()
                opt.step()
                rec = LossRecord(step, epoch, loss.item())
                history.append(rec)
                if progress:
                    progress(rec)
                step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        if pool:
            pool.shutdown()
    model.eval()
    return TrainResult(model, history, localizer, loc_history)


def predict_frames(model: HandNet, frames: Sequence[DepthFrame], cfg: TrainConfig,
                   localizer: Localizer | None = None, batch_size: int = 4) -> tuple[np.ndarray, float]:
    """Absolute joint predictions (M, F, 3) and forward-only wall time per frame (ms)."""
    preds = []
    forward_s = 0.0
    for start in range(0, len(frames), batch_size):
        samples = [prepare_sample(f, cfg, localizer) for f in frames[start:start + batch_size]]
        x = np.stack([s.grid for s in samples])
        t0 = time.perf_counter()
        out = forward_handnet(model, x)
        forward_s += time.perf_counter() - t0
        preds.append(out + np.stack([s.center for s in samples])[:, None, :])
    preds = np.concatenate(preds) if preds else np.zeros((0, model.cfg.num_joints, 3))
    return preds, 1000.0 * forward_s / max(len(frames), 1)


def evaluate(model: HandNet | None, frames: Sequence[DepthFrame], cfg: TrainConfig,
             localizer: Localizer | None = None, thresholds: Sequence[float] | None = None,
             oracle: bool = False) -> tuple[EvalReport, np.ndarray]:
    """Mean joint error and success curve over ``frames``.

    ``oracle=True`` substitutes ground truth for the network output; it
    exercises the report path without a trained model.
    """
    frames = usable_frames(frames, cfg)
    if not frames:
        raise DatasetMissing("no usable frames to evaluate")
    truths = np.stack([f.joints.joints for f in frames])
    if thresholds is None:
        thresholds = default_thresholds(cfg.threshold_max_mm, cfg.threshold_step_mm)
    if oracle:
        preds, ms = truths.copy(), 0.0
    else:
        preds, ms = predict_frames(model, frames, cfg, localizer)
    report = EvalReport.from_predictions(preds, truths, thresholds, ms, cfg.joint_names)
    return report, preds


def history_csv(history: Sequence[LossRecord]) -> str:
    rows = ["step,epoch,loss"]
    rows += [f"{r.step},{r.epoch},{r.loss!r}" for r in history]
    return "\n".join(rows) + "\n"


def sidecar_path(path) -> "Path":
    from pathlib import Path
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def save_model(path, model: HandNet, cfg: TrainConfig, localizer: Localizer | None = None) -> int:
    """Write the hand network weights, plus a JSON sidecar holding the run config.

    The localizer, when present, goes next to it as ``<path>.localizer``.
    Returns the size in bytes of the main checkpoint.
    """
    import json
    from pathlib import Path

    from .nn.checkpoint import save_checkpoint
    path = Path(path)
    size = save_checkpoint(path, model.state_dict())
    meta = {"config": cfg.to_dict(), "localizer": None}
    if localizer is not None:
        loc_path = path.with_name(path.name + ".localizer")
        save_checkpoint(loc_path, localizer.state_dict())
        meta["localizer"] = loc_path.name
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return size


def load_model(path, cfg: TrainConfig | None = None) -> tuple[HandNet, Localizer | None, TrainConfig]:
    """Inverse of :func:`save_model`; ``cfg`` overrides the stored config."""
    import json
    from pathlib import Path

    from .config import config_from_dict
    from .nn.checkpoint import load_checkpoint
    path = Path(path)
    if not path.is_file():
        raise DatasetMissing(f"checkpoint {str(path)!r} not found")
    meta = json.loads(sidecar_path(path).read_text()) if sidecar_path(path).is_file() else {}
    if cfg is None:
        cfg = config_from_dict(meta.get("config", {}))
    model = build_handnet(cfg.handnet_config(), seed=cfg.seed)
    model.load_state_dict(load_checkpoint(path))
    model.eval()
    localizer = None
    if meta.get("localizer") and cfg.use_localizer:
        localizer = build_localizer(cfg.localizer_config())
        localizer.load_state_dict(load_checkpoint(path.with_name(meta["localizer"])))
        localizer.eval()
    return model, localizer, cfg


def descent_probe(cfg: TrainConfig, frames: Sequence[DepthFrame], lr: float = 1e-6, steps: int = 10,
                  model: HandNet | None = None, calibrate_passes: int = 5) -> list[float]:
    """Loss on one fixed batch over ``steps`` Adam updates with the network in eval mode.

    Eval mode freezes BatchNorm to its running statistics and turns dropout
    off, so the batch loss is a deterministic function of the weights and a
    small step should not increase it.  The running statistics are first
    pulled toward the batch by a few gradient-free training-mode passes.
    """
    frames = list(frames)[:cfg.batch_size]
    samples = [prepare_sample(f, cfg) for f in frames]
    x = np.stack([s.grid for s in samples])
    target = np.stack([s.joints - s.center for s in samples])
    if model is None:
        model = build_handnet(cfg.handnet_config(), seed=cfg.seed, sigma=cfg.init_sigma)
    for _ in range(calibrate_passes):
        forward_handnet(model, x, training=True)
    model.eval()
    opt = Adam(model.parameters(), lr=lr)
    losses = []
    for step in range(steps + 1):
        loss = F.mse_joint_loss(model(Tensor(x)), target)
        losses.append(loss.item())
        _check_loss(losses[-1], step)
        if step == steps:
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
    return losses
