import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxhand.errors import DegenerateBatch, MissingGradient, ShapeMismatch, TapeMissing
from voxhand.nn import functional as F
from voxhand.nn import kernels
from voxhand.nn.checkpoint import deserialize_state, load_checkpoint, save_checkpoint, serialize_state
from voxhand.nn.layers import BatchNorm, Conv3d, Linear, Sequential
from voxhand.nn.optim import adam_step, init_normal_, init_weights
from voxhand.nn.tensor import Parameter, Tensor, no_grad

import oracles


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- convolution ---------------------------------------------------------------

def test_conv_k1_identity():
    x = np.random.default_rng(0).standard_normal((2, 1, 3, 4, 5))
    y = F.conv3d(t64(x), t64(np.ones((1, 1, 1, 1, 1))), t64(np.zeros(1)))
    np.testing.assert_array_equal(y.data, x)


def test_conv_all_ones_counts_neighbours():
    x = np.ones((1, 1, 4, 4, 4))
    y = F.conv3d(t64(x), t64(np.ones((1, 1, 3, 3, 3))), t64(np.zeros(1)), 1, 1).data[0, 0]
    assert y[1, 1, 1] == 27 and y[2, 2, 2] == 27
    assert y[0, 0, 0] == 8 and y[3, 3, 3] == 8 and y[0, 3, 0] == 8
    assert y[0, 1, 1] == 18 and y[0, 0, 1] == 12
    ref = np.array(oracles.conv3d(x.tolist(), np.ones((1, 1, 3, 3, 3)).tolist(), [0.0], 1, 1))
    np.testing.assert_array_equal(y, ref[0, 0])


def test_conv_stride2_output_size():
    assert kernels.conv_output_shape((5, 5, 5), 3, 2, 1) == (3, 3, 3)
    y = F.conv3d(t64(np.zeros((1, 1, 5, 5, 5))), t64(np.zeros((1, 1, 3, 3, 3))), None, 2, 1)
    assert y.shape == (1, 1, 3, 3, 3)


@pytest.mark.parametrize("seed", range(6))
def test_conv_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    k, stride, pad = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = rng.standard_normal((1, 2, 4, 5, 4))
    w = rng.standard_normal((2, 2, k, k, k))
    b = rng.standard_normal(2)
    got = F.conv3d(t64(x), t64(w), t64(b), stride, pad).data
    ref = np.array(oracles.conv3d(x.tolist(), w.tolist(), b.tolist(), stride, pad))
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k=st.sampled_from([1, 2, 3]), stride=st.sampled_from([1, 2]),
       pad=st.integers(0, 2), c=st.integers(1, 12), o=st.integers(1, 5))
def test_fast_conv_matches_naive(seed, k, stride, pad, c, o):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, c, 5, 6, 4))
    w = rng.standard_normal((o, c, k, k, k))
    b = rng.standard_normal(o)
    fast = kernels.conv3d_forward_fast(x, w, b, stride, pad)
    naive = kernels.conv3d_forward_naive(x, w, b, stride, pad)
    np.testing.assert_allclose(fast, naive, rtol=1e-6, atol=1e-9)
    gy = rng.standard_normal(fast.shape)
    for a, n in zip(kernels.conv3d_backward_fast(gy, x, w, stride, pad),
                    kernels.conv3d_backward_naive(gy, x, w, stride, pad)):
        np.testing.assert_allclose(a, n, rtol=1e-6, atol=1e-9)


def test_fast_transpose_matches_naive():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 3, 4, 2))
    w = rng.standard_normal((3, 2, 2, 2, 2))
    b = rng.standard_normal(2)
    np.testing.assert_allclose(kernels.conv_transpose3d_forward_fast(x, w, b),
                               kernels.conv_transpose3d_forward_naive(x, w, b), rtol=1e-9, atol=1e-12)


def test_conv_backward_zero_and_linearity():
    rng = np.random.default_rng(2)
    x, w = rng.standard_normal((1, 2, 4, 4, 4)), rng.standard_normal((3, 2, 3, 3, 3))
    gy = rng.standard_normal((1, 3, 4, 4, 4))
    zero = kernels.conv3d_backward_fast(np.zeros_like(gy), x, w, 1, 1)
    assert all(not np.any(g) for g in zero)
    one = kernels.conv3d_backward_fast(gy, x, w, 1, 1)
    two = kernels.conv3d_backward_fast(2 * gy, x, w, 1, 1)
    for a, b in zip(one, two):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12)


def test_transpose_doubles_axis_and_zero_weights_give_bias():
    x = t64(np.random.default_rng(0).standard_normal((1, 2, 11, 11, 11)))
    y = F.conv_transpose3d(x, t64(np.zeros((2, 3, 2, 2, 2))), t64([1.0, -2.0, 0.5]))
    assert y.shape == (1, 3, 22, 22, 22)
    np.testing.assert_array_equal(y.data[0, 1], -2.0)


# -- pooling -------------------------------------------------------------------

def test_maxpool_constant_routes_to_first():
    x = t64(np.ones((1, 1, 4, 4, 4)), grad=True)
    y = F.max_pool3d(x, 2, 2)
    np.testing.assert_array_equal(y.data, 1.0)
    y.backward(np.ones(y.shape))
    g = x.grad[0, 0]
    assert g.sum() == 8
    assert np.all(g[::2, ::2, ::2] == 1)


def test_maxpool_ramp_routes_to_last():
    x = t64(np.arange(64.0).reshape(1, 1, 4, 4, 4), grad=True)
    y = F.max_pool3d(x, 2, 2)
    np.testing.assert_array_equal(y.data[0, 0], x.data[0, 0, 1::2, 1::2, 1::2])
    y.backward(np.ones(y.shape))
    assert np.all(x.grad[0, 0, 1::2, 1::2, 1::2] == 1) and x.grad.sum() == 8


def test_adaptive_pool_bins():
    m = kernels.adaptive_pool_matrix(5, 3)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert (m > 0).sum() == 2 + 3 + 2  # bins [0,2) [1,4) [3,5)


# -- batch norm, relu, dropout, linear ----------------------------------------------

def test_batchnorm_train_normalizes():
    rng = np.random.default_rng(0)
    x = t64(rng.standard_normal((4, 3, 3, 3, 3)) * 5 + 2)
    y = F.batch_norm(x, t64(np.ones(3)), t64(np.zeros(3)), np.zeros(3), np.ones(3), True).data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3, 4)), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3, 4)), 1.0, atol=1e-6 + 2e-5)  # eps shrinks var slightly


def test_batchnorm_eval_identity_and_running_update():
    x = t64(np.random.default_rng(1).standard_normal((2, 2, 2, 2, 2)))
    y = F.batch_norm(x, t64(np.ones(2)), t64(np.zeros(2)), np.zeros(2), np.ones(2), False, eps=0.0)
    np.testing.assert_array_equal(y.data, x.data)
    rm, rv = np.zeros(2), np.ones(2)
    F.batch_norm(x, t64(np.ones(2)), t64(np.zeros(2)), rm, rv, True)
    np.testing.assert_allclose(rm, 0.1 * x.data.mean(axis=(0, 2, 3, 4)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.data.var(axis=(0, 2, 3, 4)))


def test_batchnorm_single_sample_rejected_in_train():
    bn = BatchNorm(2)
    with pytest.raises(DegenerateBatch):
        bn(Tensor(np.ones((1, 2, 2, 2, 2), np.float32)))
    bn.eval()
    bn(Tensor(np.ones((1, 2, 2, 2, 2), np.float32)))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_relu(values):
    x = np.array(values)
    y = F.relu(t64(x)).data
    np.testing.assert_array_equal(y, np.where(x > 0, x, 0.0))


def test_dropout_eval_identity():
    x = t64(np.random.default_rng(0).standard_normal(100))
    assert F.dropout(x, 0.5, False) is x


def test_dropout_statistics():
    x = t64(np.ones(10 ** 6))
    y = F.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert abs(np.mean(y > 0) - 0.5) < 0.01
    assert abs(y.mean() - 1.0) < 0.01


def test_linear_examples():
    y = F.linear(t64([[1.0, 2.0]]), t64([[1.0, 1.0], [1.0, -1.0]]), t64([0.0, 0.0]))
    np.testing.assert_array_equal(y.data, [[3.0, -1.0]])
    x = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(F.linear(t64(x), t64(np.eye(4)), t64(np.zeros(4))).data, x)
    with pytest.raises(ShapeMismatch):
        F.linear(t64(x), t64(np.eye(3)))


# -- loss ----------------------------------------------------------------------

def test_mse_fixtures():
    assert F.mse_joint_loss(t64([[3.0, 4.0, 0.0]]), [[0.0, 0.0, 0.0]]).item() == 25.0
    p = np.random.default_rng(0).standard_normal((2, 63))
    assert F.mse_joint_loss(t64(p), p).item() == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_mse_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    b, j = int(rng.integers(1, 5)), int(rng.integers(1, 22))
    p, t = rng.standard_normal((b, j, 3)) * 50, rng.standard_normal((b, j, 3)) * 50
    got = F.mse_joint_loss(t64(p.reshape(b, -1)), t).item()
    assert got == pytest.approx(oracles.mse_loss(p.tolist(), t.tolist()), rel=1e-9)


# -- tape -------------------------------------------------------------------------

def test_tape_released_after_backward():
    y = F.mse_joint_loss(t64([[1.0, 2.0, 3.0]], grad=True), [[0, 0, 0]])
    y.backward()
    with pytest.raises(TapeMissing):
        y.backward()
    with pytest.raises(TapeMissing):
        t64([1.0]).backward()


def test_no_grad_records_nothing():
    x = t64([[1.0, -1.0]], grad=True)
    with no_grad():
        y = F.relu(x)
    assert not y.requires_grad


def test_shared_parent_accumulates():
    x = t64([[1.0, 2.0, 3.0]], grad=True)
    y = F.add(x, x)
    y.backward(np.ones((1, 3)))
    np.testing.assert_array_equal(x.grad, 2.0)


# -- optimizer and init -------------------------------------------------------------

def test_adam_zero_grad_first_step_no_change():
    p = Parameter(np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    adam_step([p], 0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


@given(g=st.floats(1e-3, 1e3), sign=st.sampled_from([-1.0, 1.0]), lr=st.floats(1e-5, 1e-1))
def test_adam_first_step_is_signed_lr(g, sign, lr):
    p = Parameter(np.array([0.0]))
    p.grad = np.array([sign * g])
    adam_step([p], lr)
    # closed form: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    assert p.data[0] == pytest.approx(-lr * sign * g / (g + 1e-8), rel=1e-12)


def test_adam_missing_gradient():
    with pytest.raises(MissingGradient):
        adam_step([Parameter(np.zeros(2))], 0.1)


def test_adam_deterministic():
    a, b = Parameter(np.ones(3)), Parameter(np.ones(3))
    for _ in range(3):
        a.grad = b.grad = np.array([0.1, -0.2, 0.3])
        adam_step([a], 1e-2)
        adam_step([b], 1e-2)
    np.testing.assert_array_equal(a.data, b.data)


def test_init_statistics_and_biases():
    p = Parameter(np.zeros(10 ** 6))
    init_normal_(p, 0.005, 0)
    assert abs(p.data.mean()) < 3 * 0.005 / 1000
    assert abs(p.data.std() / 0.005 - 1) < 0.02
    model = Sequential(Conv3d(1, 2, 3), BatchNorm(2), Linear(4, 3))
    init_weights(model, 0.005, 7)
    for name, prm in model.named_parameters():
        if name.endswith("bias") or name.endswith("beta"):
            assert not np.any(prm.data)
    other = Sequential(Conv3d(1, 2, 3), BatchNorm(2), Linear(4, 3))
    init_weights(other, 0.005, 7)
    for (_, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)


# -- checkpoint ---------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    state = {"a.weight": rng.standard_normal((2, 3, 1)).astype(np.float32), "b": np.zeros(4, np.float32),
             "scalarish": np.ones((1,), np.float32)}
    n = save_checkpoint(tmp_path / "m.vxck", state)
    assert n == (tmp_path / "m.vxck").stat().st_size
    back = load_checkpoint(tmp_path / "m.vxck")
    assert list(back) == list(state)
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])
    data = serialize_state(state)
    with pytest.raises(ValueError):
        deserialize_state(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        deserialize_state(data + b"\0")


def test_no_grad_is_per_thread():
    import threading
    seen = []
    inside, release = threading.Event(), threading.Event()

    def worker():
        with no_grad():
            inside.set()
            release.wait(5)

    th = threading.Thread(target=worker)
    th.start()
    inside.wait(5)
    seen.append(F.relu(t64([[1.0]], grad=True)).requires_grad)
    release.set()
    th.join()
    assert seen == [True]
