"""Per-frame forward latency at several input sizes, repeated to measure drift.

Usage: python3 scripts/bench_latency.py [--sizes 88 44] [--frames 200] [--repeats 2]
"""

from __future__ import annotations

import argparse
import json
from dataclasses import asdict, dataclass, field

from voxhand.bench import benchmark_inference
from voxhand.models import HandNetConfig, build_handnet


@dataclass
class BenchConfig:
    sizes: list[int] = field(default_factory=lambda: [88, 44])
    frames: int = 200
    warmup: int = 20
    repeats: int = 2
    seed: int = 0


def run(bc: BenchConfig) -> dict:
    results = {}
    for size in bc.sizes:
        model = build_handnet(HandNetConfig(input_size=size), seed=bc.seed)
        reps = [benchmark_inference(model, bc.frames, size, bc.warmup, bc.seed) for _ in range(bc.repeats)]
        means = [r.mean_ms for r in reps]
        results[size] = {
            "runs": [r.to_dict() for r in reps],
            "mean_drift": (max(means) - min(means)) / min(means),
        }
    return {"config": asdict(bc), "results": results}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[88, 44])
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--warmup", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    print(json.dumps(run(BenchConfig(**vars(ap.parse_args()))), indent=2))


if __name__ == "__main__":
    main()
