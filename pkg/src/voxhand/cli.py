"""Command-line entry point: ``voxhand {prep,voxelize,train,eval,predict,bench}``.

Exit codes: 0 success, 2 usage, config, unparseable input or missing dataset,
3 unusable data (e.g. an empty frame), 4 internal error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import subprocess
import sys
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .config import TrainConfig, dump_config, load_config
from .errors import (ConfigError, CountMismatch, DataError, DatasetMissing, MalformedHeader, ParseError,
                     TruncatedFile, VoxHandError)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
MANIFEST_SCHEMA_VERSION = 1

log = logging.getLogger("voxhand")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seed: int
    code_version: str
    started: str
    finished: str = ""
    outputs: dict[str, str] = field(default_factory=dict)
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def write(self, out_dir: Path) -> Path:
        """Write under ``out_dir/manifests``; existing manifests are never overwritten."""
        mdir = out_dir / "manifests"
        mdir.mkdir(parents=True, exist_ok=True)
        stamp = self.started.replace(":", "").replace("-", "")
        n = 0
        while True:
            path = mdir / f"{stamp}-{self.command}-{n:03d}.json"
            try:
                with open(path, "x") as fh:
                    json.dump(asdict(self), fh, indent=2, sort_keys=True)
                return path
            except FileExistsError:
                n += 1


def code_version() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def build_config(args, base: TrainConfig | None = None) -> TrainConfig:
    """Config file (or ``base``, or defaults) with command-line flags applied on top."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = base if base is not None else TrainConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "subject_holdout", None) is not None:
        changes["held_out_subject"] = args.subject_holdout
    if getattr(args, "synthetic", False):
        changes["synthetic"] = True
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "input_size", None) is not None:
        changes["input_size"] = args.input_size
    return cfg.replace(**changes) if changes else cfg


def _write(path: Path, text: str, outputs: dict, key: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    outputs[key] = str(path)


def cmd_prep(args, cfg: TrainConfig, out: Path, outputs: dict) -> None:
    from .ingest import write_synthetic_dataset
    root = out / "synthetic"
    gestures = [str(g + 1) for g in range(cfg.synthetic_gestures)]
    frames = args.frames if args.frames is not None else cfg.synthetic_frames_per_gesture
    write_synthetic_dataset(root, cfg.intrinsics, cfg.synthetic_subjects, gestures, frames, cfg.seed,
                            cfg.y_sign, cfg.z_sign)
    outputs["dataset_root"] = str(root)
    print(json.dumps({"dataset_root": str(root), "subjects": cfg.synthetic_subjects,
                      "gestures": len(gestures), "frames_per_gesture": frames}))


def cmd_voxelize(args, cfg: TrainConfig, out: Path, outputs: dict) -> None:
    from .ingest import load_msra_frame
    from .training import locate_hand
    from .voxelize import crop_grid, occupancy_count, voxelize, write_grid
    frame = load_msra_frame(args.frame, cfg.intrinsics)
    cloud, ref = locate_hand(frame, cfg)
    grid = crop_grid(voxelize(cloud, ref.position, cfg.grid_size, cfg.pitch), cfg.input_size, "center")
    path = out / (Path(args.frame).stem + ".vox")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_grid(path, grid)
    outputs["grid"] = str(path)
    print(json.dumps({"occupancy": occupancy_count(grid), "grid_size": list(grid.size),
                      "pitch_mm": grid.pitch, "reference_point_mm": [float(v) for v in ref.position],
                      "reference_source": ref.source.value, "dump": str(path)}))


def cmd_train(args, cfg: TrainConfig, out: Path, outputs: dict) -> None:
    from .training import history_csv, resolve_dataset_root, save_model, train

    def progress(rec):
        if rec.step % 10 == 0:
            log.info("step %d epoch %d loss %.4f", rec.step, rec.epoch, rec.loss)

    if args.steps is not None:
        cfg = cfg.replace(max_steps=args.steps)
    if args.frames is not None:
        cfg = cfg.replace(max_frames_per_subject=args.frames)
    cfg = cfg.replace(dataset_root=str(Path(resolve_dataset_root(cfg, out)).resolve()))
    result = train(cfg, progress=progress, out_dir=out)
    ckpt = out / "model.vxck"
    size = save_model(ckpt, result.model, cfg, result.localizer)
    outputs["checkpoint"] = str(ckpt)
    _write(out / "loss.csv", history_csv(result.history), outputs, "loss_csv")
    if result.localizer_history is not None:
        _write(out / "localizer_loss.csv", history_csv(result.localizer_history), outputs, "localizer_loss_csv")
    _write(out / "config.yaml", dump_config(cfg), outputs, "config")
    print(json.dumps({"checkpoint": str(ckpt), "checkpoint_bytes": size,
                      "parameters": result.model.num_parameters(), "steps": len(result.history),
                      "final_loss": result.history[-1].loss if result.history else None}))


def _eval_frames(args, cfg: TrainConfig, out: Path):
    from .training import load_split
    train_frames, test_frames = load_split(cfg, out)
    frames = test_frames if test_frames else train_frames
    if args.frames is not None:
        frames = frames[:args.frames]
    return frames


def cmd_eval(args, cfg: TrainConfig, out: Path, outputs: dict) -> None:
    from .training import evaluate, load_model
    if args.oracle:
        model = localizer = None
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint (or --oracle)")
        model, localizer, stored = load_model(args.checkpoint)
        cfg = build_config(args, stored)
    frames = _eval_frames(args, cfg, out)
    report, _ = evaluate(model, frames, cfg, localizer, oracle=args.oracle)
    _write(out / "per_joint_error.csv", report.per_joint_csv(), outputs, "per_joint_csv")
    _write(out / "success_curve.csv", report.curve_csv(), outputs, "curve_csv")
    _write(out / "report.json", report.to_json(), outputs, "report_json")
    _write(out / "timing.json", json.dumps({"wall_time_per_frame_ms": report.wall_time_per_frame,
                                            "frames": report.frames_evaluated}, indent=2), outputs, "timing_json")
    print(json.dumps({"frames": report.frames_evaluated, "overall_mean_error_mm": report.overall_mean_error}))


def cmd_predict(args, cfg: TrainConfig, out: Path, outputs: dict) -> None:
    from .ingest import load_msra_frame
    from .models import forward_handnet
    from .training import load_model, prepare_sample
    if not args.checkpoint:
        raise UsageError("predict needs --checkpoint")
    model, localizer, cfg = load_model(args.checkpoint)
    frame = load_msra_frame(args.frame, cfg.intrinsics)
    s = prepare_sample(frame, cfg, localizer)
    joints = forward_handnet(model, s.grid[None], s.center[None])[0]
    body = {"joints_mm": [[float(v) for v in j] for j in joints], "joint_names": list(cfg.joint_names),
            "reference_point_mm": [float(v) for v in s.reference.position]}
    _write(out / (Path(args.frame).stem + ".joints.json"), json.dumps(body, indent=2), outputs, "joints_json")
    print(json.dumps(body))


def cmd_bench(args, cfg: TrainConfig, out: Path, outputs: dict) -> None:
    from .bench import benchmark_inference
    model = None
    if args.checkpoint:
        from .training import load_model
        model, _, stored = load_model(args.checkpoint)
        cfg = build_config(args, stored)
    size = args.input_size if args.input_size is not None else cfg.input_size
    frames = args.frames if args.frames is not None else 200
    rep = benchmark_inference(model, frames, size, args.warmup, cfg.seed)
    _write(out / f"bench_{size}.json", json.dumps(rep.to_dict(), indent=2), outputs, "bench_json")
    print(json.dumps(rep.to_dict()))


COMMANDS = {"prep": cmd_prep, "voxelize": cmd_voxelize, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML key: value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--subject-holdout", help="subject id held out for testing (LOSO)")
    common.add_argument("--synthetic", action="store_true", help="use (and if needed write) a synthetic dataset")
    common.add_argument("--workers", type=int)
    common.add_argument("--frames", type=int)
    common.add_argument("--input-size", type=int)
    common.add_argument("--out-dir", default="runs", type=Path)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="voxhand", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("prep", parents=[common], help="write a synthetic MSRA-layout dataset")
    p = sub.add_parser("voxelize", parents=[common], help="voxelize one depth frame")
    p.add_argument("frame")
    p = sub.add_parser("train", parents=[common], help="train the network")
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="use ground truth as predictions (report-path test)")
    p = sub.add_parser("predict", parents=[common], help="predict joints for one frame")
    p.add_argument("--checkpoint")
    p.add_argument("frame")
    p = sub.add_parser("bench", parents=[common], help="time network forward per frame")
    p.add_argument("--checkpoint")
    p.add_argument("--warmup", type=int, default=20)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"voxhand: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    out = Path(args.out_dir)
    started = _now()
    outputs: dict[str, str] = {}
    cfg = None
    code = EXIT_OK
    try:
        cfg = build_config(args)
        COMMANDS[args.command](args, cfg, out, outputs)
    except (UsageError, ConfigError, ParseError, TruncatedFile, MalformedHeader, CountMismatch,
            DatasetMissing) as exc:
        print(f"voxhand: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except DataError as exc:
        print(f"voxhand: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except (VoxHandError, Exception) as exc:  # noqa: BLE001
        traceback.print_exc()
        print(f"voxhand: internal error: {exc}", file=sys.stderr)
        code = EXIT_INTERNAL
    snapshot = (cfg or TrainConfig()).to_dict()
    manifest = RunManifest(args.command, argv, snapshot, snapshot["seed"], code_version(), started, _now(), outputs)
    try:
        manifest.write(out)
    except OSError as exc:
        print(f"voxhand: could not write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
