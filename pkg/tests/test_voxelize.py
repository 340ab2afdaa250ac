import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxhand.errors import TargetTooLarge
from voxhand.geometry import PointCloud
from voxhand.voxelize import (VoxelGrid, crop_grid, crop_offsets, dump_grid, load_grid_dump, occupancy_count,
                              voxelize, write_grid)

import oracles


def test_empty_cloud_gives_empty_grid():
    g = voxelize(PointCloud(np.zeros((0, 3))), (0, 0, 0), 8, 10.0)
    assert occupancy_count(g) == 0 and g.size == (8, 8, 8)


def test_point_at_center():
    c = np.array([12.5, -40.0, 600.0])
    g = voxelize(PointCloud([c]), c, 88, 10.0)
    assert occupancy_count(g) == 1
    assert tuple(np.argwhere(g.occupancy)[0]) == (44, 44, 44)
    g = voxelize(PointCloud([c + (10, 0, 0)]), c, 88, 10.0)
    assert tuple(np.argwhere(g.occupancy)[0]) == (45, 44, 44)


@pytest.mark.parametrize("seed", range(10))
def test_voxelize_oracle(seed):
    rng = np.random.default_rng(seed)
    size, pitch = int(rng.integers(4, 16)), float(rng.uniform(2, 12))
    center = rng.uniform(-50, 50, 3)
    pts = center + rng.uniform(-0.7, 0.7, (150, 3)) * size * pitch
    g = voxelize(pts, center, size, pitch)
    np.testing.assert_array_equal(g.occupancy, np.array(oracles.voxelize(pts.tolist(), center.tolist(), size, pitch)))
    assert occupancy_count(g) <= len(pts)


def test_crop_cases():
    rng = np.random.default_rng(0)
    g = VoxelGrid((rng.random((96, 96, 96)) < 0.1).astype(np.uint8), 3.125, (0.0, 0.0, 0.0))
    assert crop_offsets(g.size, 88) == (4, 4, 4)
    c = crop_grid(g, 88)
    np.testing.assert_array_equal(c.occupancy, g.occupancy[4:92, 4:92, 4:92])
    np.testing.assert_allclose(c.center, g.center)
    assert crop_grid(g, 96) == g
    assert crop_grid(g, 88, "random", 5) == crop_grid(g, 88, "random", 5)
    with pytest.raises(TargetTooLarge):
        crop_grid(g, 97)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), size=st.integers(2, 12), data=st.data())
def test_crop_oracle(seed, size, data):
    target = data.draw(st.integers(1, size))
    occ = (np.random.default_rng(seed).random((size,) * 3) < 0.3).astype(np.uint8)
    g = VoxelGrid(occ, 1.0, (0.0, 0.0, 0.0))
    offs = crop_offsets(g.size, target, "random", seed)
    assert all(0 <= o <= size - target for o in offs)
    c = crop_grid(g, target, offsets=offs)
    np.testing.assert_array_equal(c.occupancy, np.array(oracles.crop(occ.tolist(), offs, target)))
    np.testing.assert_allclose(c.origin, np.array(offs, float))


@given(st.integers(0, 10 ** 6))
def test_occupancy_count_oracle(seed):
    occ = (np.random.default_rng(seed).random((5, 6, 7)) < 0.4).astype(np.uint8)
    assert occupancy_count(VoxelGrid(occ, 1.0, (0, 0, 0))) == oracles.count(occ.tolist())


def test_single_point_count():
    assert occupancy_count(voxelize([[1.0, 2.0, 3.0]], (0, 0, 0), 10, 1.0)) == 1


def test_dump_roundtrip(tmp_path):
    occ = (np.random.default_rng(3).random((5, 6, 7)) < 0.3).astype(np.uint8)
    g = VoxelGrid(occ, 2.5, (1.0, -2.0, 3.5))
    assert load_grid_dump(dump_grid(g)) == g
    write_grid(tmp_path / "g.vox", g)
    assert (tmp_path / "g.vox").read_bytes() == dump_grid(g)
