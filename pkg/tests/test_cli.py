import csv
import json

import numpy as np
import pytest

from voxhand.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from voxhand.ingest import DepthFrame, synth_frame, write_msra_frame
from voxhand.metrics import CURVE_COLUMNS, PER_JOINT_COLUMNS

TINY = """\
synthetic: true
synthetic_subjects: 2
synthetic_gestures: 1
synthetic_frames_per_gesture: 3
batch_size: 2
epochs: 1
max_steps: 2
input_size: 16
grid_size: 20
use_localizer: false
seed: 5
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def frame_path(tmp_path, intrinsics):
    f, _ = synth_frame(4, intrinsics)
    p = tmp_path / "000004_depth.bin"
    write_msra_frame(p, f)
    return p


def manifests(out_dir):
    return sorted((out_dir / "manifests").glob("*.json"))


def test_voxelize(tmp_path, frame_path, capsys):
    code, out, _ = run(capsys, "voxelize", frame_path, "--out-dir", tmp_path / "a")
    assert code == EXIT_OK
    stats = json.loads(out)
    assert stats["occupancy"] > 0 and stats["grid_size"] == [88, 88, 88]
    first = (tmp_path / "a" / "000004_depth.vox").read_bytes()
    run(capsys, "voxelize", frame_path, "--out-dir", tmp_path / "b")
    assert (tmp_path / "b" / "000004_depth.vox").read_bytes() == first
    assert len(manifests(tmp_path / "a")) == 1


def test_voxelize_empty_frame(tmp_path, intrinsics, capsys):
    p = tmp_path / "000000_depth.bin"
    write_msra_frame(p, DepthFrame(320, 240, (0, 0, 8, 8), np.zeros((8, 8)), intrinsics))
    code, _, err = run(capsys, "voxelize", p, "--out-dir", tmp_path)
    assert code == EXIT_DATA and "EmptyFrame" in err


def test_voxelize_parse_error(tmp_path, capsys):
    p = tmp_path / "000000_depth.bin"
    p.write_bytes(b"\1\2\3")
    code, _, err = run(capsys, "voxelize", p, "--out-dir", tmp_path)
    assert code == EXIT_USAGE and "TruncatedFile" in err
    code, _, err = run(capsys, "voxelize", p, "--config", tmp_path / "none.yaml", "--out-dir", tmp_path)
    assert code == EXIT_USAGE and "ConfigInvalid" in err


def test_usage_error(capsys):
    assert run(capsys, "train", "--bogus")[0] == EXIT_USAGE
    assert run(capsys)[0] == EXIT_USAGE


def test_train_missing_dataset(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"dataset_root: {tmp_path / 'nowhere'}\nuse_localizer: false\n")
    code, _, err = run(capsys, "train", "--config", cfg, "--out-dir", tmp_path / "o")
    assert code == EXIT_USAGE and "DatasetMissing" in err
    assert len(manifests(tmp_path / "o")) == 1


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY)
    assert main(["train", "--config", str(cfg), "--out-dir", str(root / "run1")]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--out-dir", str(root / "run2")]) == EXIT_OK
    return root, cfg


def test_train_artifacts_and_repeatability(trained):
    root, _ = trained
    for name in ("model.vxck", "model.vxck.json", "loss.csv", "config.yaml"):
        assert (root / "run1" / name).is_file()
    assert len(manifests(root / "run1")) == 1
    a = (root / "run1" / "loss.csv").read_text()
    assert a == (root / "run2" / "loss.csv").read_text()
    assert a.splitlines()[0] == "step,epoch,loss" and len(a.splitlines()) == 3
    m = json.loads(manifests(root / "run1")[0].read_text())
    assert m["command"] == "train" and m["seed"] == 5 and m["config"]["input_size"] == 16
    assert "checkpoint" in m["outputs"]


def test_eval_outputs(trained, capsys):
    root, _ = trained
    out = root / "eval"
    code, _, _ = run(capsys, "eval", "--checkpoint", root / "run1" / "model.vxck", "--out-dir", out)
    assert code == EXIT_OK
    with open(out / "per_joint_error.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == PER_JOINT_COLUMNS and len(rows) == 22
    with open(out / "success_curve.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CURVE_COLUMNS
    fr = [float(r[1]) for r in rows[1:]]
    assert all(a <= b for a, b in zip(fr, fr[1:]))
    report = json.loads((out / "report.json").read_text())
    assert "wall_time_per_frame_ms" not in report
    assert "wall_time_per_frame_ms" in json.loads((out / "timing.json").read_text())
    again = root / "eval2"
    run(capsys, "eval", "--checkpoint", root / "run1" / "model.vxck", "--out-dir", again)
    assert (again / "report.json").read_text() == (out / "report.json").read_text()
    assert (again / "per_joint_error.csv").read_text() == (out / "per_joint_error.csv").read_text()


def test_eval_oracle(trained, capsys):
    root, cfg = trained
    out = root / "oracle"
    code, _, _ = run(capsys, "eval", "--oracle", "--config", cfg, "--out-dir", out)
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert all(v == 0.0 for v in report["per_joint_mean_error_mm"].values())
    assert all(p["fraction"] == 1.0 for p in report["success_curve"])


def test_predict(trained, frame_path, capsys):
    root, _ = trained
    ckpt = root / "run1" / "model.vxck"
    code, out, _ = run(capsys, "predict", "--checkpoint", ckpt, frame_path, "--out-dir", root / "p")
    assert code == EXIT_OK
    joints = json.loads(out)["joints_mm"]
    assert len(joints) == 21 and all(len(j) == 3 for j in joints)
    _, out2, _ = run(capsys, "predict", "--checkpoint", ckpt, frame_path, "--out-dir", root / "p")
    assert out == out2


def test_bench(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--frames", 5, "--warmup", 1, "--input-size", 16, "--out-dir", tmp_path)
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["input_size"] == 16 and rep["frames"] == 5
    assert rep["p50_ms"] > 0 and rep["p99_ms"] >= rep["p50_ms"] and np.isfinite(rep["mean_ms"])
    assert rep["hardware"] and rep["paper_reference_ms"] == 0.185


def test_prep(tmp_path, capsys):
    code, out, _ = run(capsys, "prep", "--frames", 1, "--out-dir", tmp_path)
    assert code == EXIT_OK
    assert len(list((tmp_path / "synthetic").glob("P*/*/joint.txt"))) == 9 * 2
