"""Overfit a handful of synthetic frames at a reduced input size.

Regularization is off: no augmentation and, by default, no dropout, since
the point is to check that the optimizer can memorize.  Pass ``--dropout 0.5``
to see the effect of the published head dropout.

Usage: python3 scripts/overfit.py [--steps 300] [--frames 8] [--input-size 44] [--dropout 0.5]
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from voxhand.config import TrainConfig
from voxhand.ingest import synth_frame
from voxhand.metrics import mean_joint_error
from voxhand.training import predict_frames, train


@dataclass
class OverfitConfig:
    frames: int = 8
    steps: int = 300
    input_size: int = 44
    grid_size: int = 48
    lr: float = 3.0e-4
    batch_size: int = 4
    dropout: float = 0.0
    init_sigma: float = 0.005
    seed: int = 0


def synthetic_frames(n: int, seed: int, intrinsics):
    out = []
    for i in range(n):
        frame, _ = synth_frame(seed * 1000 + i, intrinsics, frame_index=i)
        out.append(frame)
    return out


def run(oc: OverfitConfig, progress=None) -> dict:
    cfg = TrainConfig(lr=oc.lr, batch_size=oc.batch_size, epochs=10 ** 6, max_steps=oc.steps, seed=oc.seed,
                      augment=False, use_localizer=False, grid_size=oc.grid_size, input_size=oc.input_size,
                      dropout=oc.dropout, init_sigma=oc.init_sigma)
    frames = synthetic_frames(oc.frames, oc.seed, cfg.intrinsics)
    t0 = time.perf_counter()
    result = train(cfg, frames, progress=progress)
    preds, _ = predict_frames(result.model, frames, cfg)
    _, err = mean_joint_error(preds, np.stack([f.joints.joints for f in frames]))
    losses = [r.loss for r in result.history]
    return {
        "config": asdict(oc),
        "initial_loss": losses[0],
        "final_loss": losses[-1],
        "min_loss": min(losses),
        "loss_ratio": losses[-1] / losses[0],
        "train_mean_error_mm": err,
        "seconds": time.perf_counter() - t0,
        "losses": losses,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    for f, v in asdict(OverfitConfig()).items():
        ap.add_argument("--" + f.replace("_", "-"), type=type(v), default=v)
    oc = OverfitConfig(**vars(ap.parse_args()))
    res = run(oc, progress=lambda r: print(f"step {r.step:4d} loss {r.loss:.4f}", flush=True)
              if r.step % 10 == 0 else None)
    res.pop("losses")
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
