import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxhand.augment import (ANGLE_RANGE, IDENTITY, SCALE_RANGE, TRANSLATION_RANGE, AugmentParams, apply,
                             augment_grid, augment_joints, augment_points, sample_params, transform)
from voxhand.ingest import JointSet
from voxhand.voxelize import VoxelGrid

import oracles

params_st = st.builds(
    AugmentParams,
    scale=st.floats(*SCALE_RANGE),
    translation=st.tuples(*[st.floats(*TRANSLATION_RANGE)] * 3),
    angle=st.floats(*ANGLE_RANGE),
)


@given(st.integers(0, 2 ** 63 - 1))
def test_sampled_params_in_range(seed):
    p = sample_params(seed)
    assert SCALE_RANGE[0] <= p.scale <= SCALE_RANGE[1]
    assert all(TRANSLATION_RANGE[0] <= t <= TRANSLATION_RANGE[1] for t in p.translation)
    assert ANGLE_RANGE[0] <= p.angle <= ANGLE_RANGE[1]
    assert sample_params(seed) == p


def test_scale_sampling_covers_range():
    s = np.array([sample_params(i).scale for i in range(10 ** 4)])
    assert s.min() >= 0.7 and s.max() <= 1.2
    assert s.min() < 0.71 and s.max() > 1.19


def test_identity_and_quarter_turn():
    v = np.array([3.0, -1.0, 2.0])
    np.testing.assert_array_equal(apply(v, IDENTITY), v)
    # 90 degrees is outside the sampling range, so use the unchecked transform
    np.testing.assert_allclose(transform([1.0, 0.0, 0.0], 1.0, (0, 0, 0), 90.0), [0.0, 1.0, 0.0], atol=1e-15)


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        AugmentParams(scale=2.0)
    with pytest.raises(ValueError):
        AugmentParams(translation=(8.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        AugmentParams(angle=41.0)


@given(params_st, st.tuples(*[st.floats(-50, 50)] * 3))
def test_norm_scales_by_s(p, v):
    out = apply(np.array(v), p)
    # undo the translation (applied before rotation) by rotating it too
    shift = apply(np.zeros(3), p)
    assert np.linalg.norm(out - shift) == pytest.approx(p.scale * np.linalg.norm(v), rel=1e-9, abs=1e-9)


@given(params_st, st.tuples(*[st.floats(-50, 50)] * 3), st.tuples(*[st.floats(-50, 50)] * 3))
def test_apply_matches_oracle(p, v, c):
    got = apply(np.array(v), p, np.array(c))
    ref = oracles.augment_point(v, p.scale, p.translation, p.angle, c)
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-9)


def _blob(size=24, margin=8, seed=0):
    occ = np.zeros((size,) * 3, np.uint8)
    inner = (np.random.default_rng(seed).random((size - 2 * margin,) * 3) < 0.3).astype(np.uint8)
    occ[margin:size - margin, margin:size - margin, margin:size - margin] = inner
    return VoxelGrid(occ, 10.0, (0.0, 0.0, 0.0))


def test_grid_identity():
    g = _blob()
    assert augment_grid(g, IDENTITY) == g


def test_grid_translation_roundtrip():
    g = _blob()
    there = augment_grid(g, AugmentParams(translation=(7.0, 0.0, 0.0)))
    assert there != g
    assert augment_grid(there, AugmentParams(translation=(-7.0, 0.0, 0.0))) == g


def test_grid_rotation_of_center_voxel():
    occ = np.zeros((9, 9, 9), np.uint8)
    occ[4, 4, 4] = 1
    g = VoxelGrid(occ, 1.0, (0.0, 0.0, 0.0))
    back = augment_grid(augment_grid(g, AugmentParams(angle=40.0)), AugmentParams(angle=-40.0))
    assert back == g


@pytest.mark.parametrize("seed", range(4))
def test_grid_matches_oracle(seed):
    g = _blob(12, 2, seed)
    p = sample_params(seed)
    ref = oracles.augment_grid(g.occupancy.tolist(), p.scale, p.translation, p.angle)
    np.testing.assert_array_equal(augment_grid(g, p).occupancy, np.array(ref))


def test_joints_identity_and_translation(rng):
    j = JointSet(rng.uniform(-100, 100, (21, 3)))
    grid = VoxelGrid(np.zeros((4, 4, 4), np.uint8), 10.0, (-20.0, -20.0, -20.0))
    assert augment_joints(j, IDENTITY, grid) == j
    moved = augment_joints(j, AugmentParams(translation=(1.0, 0.0, 0.0)), grid)
    np.testing.assert_allclose(moved.joints - j.joints, np.tile([10.0, 0.0, 0.0], (21, 1)), atol=1e-12)


@settings(max_examples=50)
@given(params_st, st.integers(0, 1000))
def test_joint_distances_scale(p, seed):
    pts = np.random.default_rng(seed).uniform(-100, 100, (21, 3))
    out = augment_points(pts, p, (5.0, 6.0, 7.0), 3.125)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.testing.assert_allclose(d1, p.scale * d0, rtol=1e-9, atol=1e-9)
