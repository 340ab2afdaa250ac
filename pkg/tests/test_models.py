import numpy as np
import pytest

from voxhand.errors import ConfigInvalid, ShapeMismatch
from voxhand.models import (HandNetConfig, LocalizerConfig, build_handnet, build_localizer, forward_handnet,
                            forward_localizer, spatial_trace)
from voxhand.nn.checkpoint import save_checkpoint
from voxhand.nn.layers import Linear
from voxhand.nn.tensor import Tensor


@pytest.fixture(scope="module")
def small_net():
    return build_handnet(HandNetConfig(input_size=16), seed=0)


def _conv_layers(model):
    return [s for s in model.layer_specs() if s.kind == "Conv3D"]


def test_eleven_conv3d_layers():
    assert len(_conv_layers(build_handnet(HandNetConfig(input_size=16)))) == 11


def test_fc_widths():
    cfg = HandNetConfig()
    assert cfg.fc_units == (21 * 44, 21 * 11, 21 * 3)
    net = build_handnet(HandNetConfig(input_size=16))
    widths = [m.weight.shape[0] for m in net.head.modules() if isinstance(m, Linear)]
    assert widths == [924, 231, 63]


def test_spatial_trace():
    assert spatial_trace(88) == [88, 44, 22, 11, 22]
    assert spatial_trace(44) == [44, 22, 11, 5, 10]


def test_output_shape(small_net):
    grids = (np.random.default_rng(0).random((2, 1, 16, 16, 16)) < 0.1).astype(np.float32)
    small_net.eval()
    out = small_net(Tensor(grids))
    assert out.shape == (2, 63)
    assert forward_handnet(small_net, grids).shape == (2, 21, 3)


def test_shape_mismatch(small_net):
    with pytest.raises(ShapeMismatch):
        small_net(Tensor(np.zeros((1, 1, 15, 16, 16), np.float32)))


def test_zero_final_fc_puts_joints_at_reference():
    net = build_handnet(HandNetConfig(input_size=16), seed=1)
    last = [m for m in net.head.modules() if isinstance(m, Linear)][-1]
    last.weight.data[...] = 0
    ref = np.array([[10.0, -20.0, 600.0]])
    out = forward_handnet(net, np.ones((1, 1, 16, 16, 16), np.float32), ref)
    np.testing.assert_array_equal(out[0], np.tile(ref, (21, 1)))


def test_identical_grids_identical_outputs(small_net):
    g = (np.random.default_rng(3).random((1, 1, 16, 16, 16)) < 0.2).astype(np.float32)
    out = forward_handnet(small_net, np.concatenate([g, g]))
    np.testing.assert_array_equal(out[0], out[1])


def test_parameter_count_and_file_size(tmp_path):
    net = build_handnet(HandNetConfig())
    n = net.num_parameters()
    assert n < 11_000_000
    size = save_checkpoint(tmp_path / "m.vxck", net.state_dict())
    assert size < 42 * 1024 * 1024
    # the head and adaptive pool make the count independent of input size
    assert build_handnet(HandNetConfig(input_size=44)).num_parameters() == n


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        HandNetConfig(channels=(1, 2, 3))
    with pytest.raises(ConfigInvalid):
        HandNetConfig(dropout=1.0)


def test_localizer_shapes_and_zero_weights():
    loc = build_localizer(LocalizerConfig(), sigma=0.0)
    crops = np.random.default_rng(0).uniform(-1, 1, (3, 1, 96, 96)).astype(np.float32)
    out = forward_localizer(loc, crops)
    assert out.shape == (3, 3)
    assert not np.any(out)
