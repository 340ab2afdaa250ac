"""Per-frame inference timing."""

from __future__ import annotations

import contextlib
import gc
import os
import platform
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .models import HandNet, build_handnet, forward_handnet

# published per-frame figure, GPU; kept for context only
PAPER_MS_PER_FRAME = 0.185


@dataclass
class BenchReport:
    mode: str  # "forward" or "end_to_end"
    input_size: int
    frames: int
    warmup: int
    mean_ms: float
    p50_ms: float
    p99_ms: float
    hardware: str
    paper_reference_ms: float = PAPER_MS_PER_FRAME

    def to_dict(self) -> dict:
        return asdict(self)


def hardware_string() -> str:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{cpu}; {os.cpu_count()} logical cpu; numpy {np.__version__}; python {platform.python_version()}"


@contextlib.contextmanager
def _quiet_gc():
    """Collect once, then keep the cyclic collector out of the timed loop (as timeit does)."""
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def _summarize(times_s: Sequence[float]) -> tuple[float, float, float]:
    ms = np.asarray(times_s) * 1000.0
    return float(ms.mean()), float(np.percentile(ms, 50)), float(np.percentile(ms, 99))


def benchmark_inference(model: HandNet | None = None, frames: int = 200, input_size: int = 88,
                        warmup: int = 20, seed: int = 0) -> BenchReport:
    """Time grid -> joints, one frame per forward call, in eval mode."""
    if frames < 1:
        raise ValueError("frames must be positive")
    if model is None or model.cfg.input_size != input_size:
        from .models import HandNetConfig
        base = model.cfg if model is not None else HandNetConfig()
        from dataclasses import replace
        model = build_handnet(replace(base, input_size=input_size), seed=seed)
    model.eval()
    rng = np.random.default_rng(seed)
    grid = (rng.random((1, 1) + (input_size,) * 3) < 0.05).astype(np.float32)
    for _ in range(warmup):
        forward_handnet(model, grid)
    times = []
    with _quiet_gc():
        for _ in range(frames):
            t0 = time.perf_counter()
            forward_handnet(model, grid)
            times.append(time.perf_counter() - t0)
    mean, p50, p99 = _summarize(times)
    return BenchReport("forward", input_size, frames, warmup, mean, p50, p99, hardware_string())


def benchmark_end_to_end(model: HandNet, depth_frames, cfg, localizer=None, frames: int = 200,
                         warmup: int = 20) -> BenchReport:
    """Time depth frame -> joints: segmentation, voxelization and forward."""
    from .training import prepare_sample

    depth_frames = list(depth_frames)
    model.eval()

    def one(i):
        f = depth_frames[i % len(depth_frames)]
        s = prepare_sample(f, cfg, localizer)
        forward_handnet(model, s.grid[None], s.center[None])

    for i in range(warmup):
        one(i)
    times = []
    with _quiet_gc():
        for i in range(frames):
            t0 = time.perf_counter()
            one(i)
            times.append(time.perf_counter() - t0)
    mean, p50, p99 = _summarize(times)
    return BenchReport("end_to_end", cfg.input_size, frames, warmup, mean, p50, p99, hardware_string())
