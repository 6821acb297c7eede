import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hamrom import autodiff as ad
from hamrom.autodiff import DimensionError, Tape, Tensor, finite_diff_check


def grad_of(f, x):
    with Tape() as tape:
        xt = tape.watch(Tensor(x))
        y = f(xt)
    return tape.gradient(y, [xt])[0]


# ---------------------------------------------------------------- matmul


def test_matmul_identity_and_projector():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(np.eye(2), m).data, m)
    out = ad.matmul(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[5.0], [7.0]]))
    np.testing.assert_array_equal(out.data, [[5.0], [0.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(ad.matmul(a, b).data, ref, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


# ---------------------------------------------------------------- convolution


def test_conv_identity_kernel():
    x = np.random.default_rng(1).normal(size=(1, 7))
    np.testing.assert_array_equal(ad.conv1d_periodic(x, np.ones((1, 1, 1))).data, x)


def test_conv_centred_delta():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    out = ad.conv1d_periodic(x, np.array([[[0.0, 1.0, 0.0]]]))
    np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0, 4.0]])


def test_conv_stride2_pairs():
    out = ad.conv1d_periodic(np.array([[1.0, 2.0, 3.0, 4.0]]), np.array([[[1.0, 1.0]]]), stride=2)
    np.testing.assert_array_equal(out.data, [[3.0, 7.0]])


def test_conv_width3_wraps_periodically():
    # output i reads (i-1, i, i+1) mod L
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    out = ad.conv1d_periodic(x, np.array([[[1.0, 10.0, 100.0]]]))
    np.testing.assert_array_equal(out.data, [[4 + 10 + 200, 1 + 20 + 300, 2 + 30 + 400, 3 + 40 + 100]])


def test_conv_multichannel_matches_loop_oracle():
    rng = np.random.default_rng(2)
    for stride, width in ((1, 3), (2, 2), (1, 2), (2, 3)):
        x = rng.normal(size=(3, 2, 8))
        k = rng.normal(size=(4, 2, width))
        offs = [-1, 0, 1] if width == 3 else [0, 1]
        ref = np.zeros((3, 4, 8 // stride))
        for b in range(3):
            for co in range(4):
                for i in range(8 // stride):
                    for ci in range(2):
                        for j, o in enumerate(offs):
                            ref[b, co, i] += k[co, ci, j] * x[b, ci, (i * stride + o) % 8]
        np.testing.assert_allclose(ad.conv1d_periodic(x, k, stride).data, ref, atol=1e-12)


def test_conv_rejects_bad_length():
    with pytest.raises(DimensionError):
        ad.conv1d_periodic(np.ones((1, 5)), np.ones((1, 1, 2)), stride=2)
    with pytest.raises(DimensionError):
        ad.conv1d_periodic(np.ones((2, 4)), np.ones((1, 3, 3)))


@settings(max_examples=25, deadline=None)
@given(shift=st.integers(0, 11), seed=st.integers(0, 2**16))
def test_conv_commutes_with_circular_shift(shift, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 12))
    k = rng.normal(size=(3, 2, 3))
    a = ad.conv1d_periodic(np.roll(x, shift, axis=-1), k).data
    b = np.roll(ad.conv1d_periodic(x, k).data, shift, axis=-1)
    np.testing.assert_array_equal(a, b)


def test_upsample_examples():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(ad.upsample2_smooth(x, np.array([[[1.0, 0.0]]])).data, [[1, 1, 2, 2]])
    np.testing.assert_allclose(ad.upsample2_smooth(x, np.array([[[0.5, 0.5]]])).data, [[1, 1.5, 2, 1.5]])
    np.testing.assert_array_equal(ad.upsample2_smooth(np.zeros((2, 3)), np.ones((1, 2, 2))).data, np.zeros((1, 6)))


# ---------------------------------------------------------------- activations and reductions


def test_activation_values():
    for kind in ("elu", "swish", "tanh", "none"):
        assert ad.activation(np.array(0.0), kind).data == 0.0
    assert abs(ad.activation(np.array(-20.0), "elu").data + 1.0) < 1e-8
    assert ad.activation(np.array(1.0), "swish").data == pytest.approx(0.7310585786, abs=1e-10)
    np.testing.assert_allclose(ad.activation(np.array([-1.0, 2.0]), "elu").data, [np.exp(-1) - 1, 2.0])


def test_activation_grad_matches_fd_of_activation():
    x = np.linspace(-2, 2, 8)  # skips the elu kink at 0
    for kind in ("elu", "swish", "tanh", "none"):
        fd = (ad.activation(x + 1e-6, kind).data - ad.activation(x - 1e-6, kind).data) / 2e-6
        np.testing.assert_allclose(ad.activation_grad(x, kind).data, fd, atol=1e-8)


def test_reduce_sum_squares():
    assert ad.reduce_sum_squares(np.zeros(5)).data == 0.0
    assert ad.reduce_sum_squares(np.array([3.0, 4.0])).data == 25.0
    v = np.random.default_rng(3).normal(size=37)
    ref = 0.0
    for e in v:
        ref += e * e
    assert abs(float(ad.reduce_sum_squares(v).data) - ref) < 1e-12


# ---------------------------------------------------------------- backward


def test_backward_quadratic_and_constant():
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(grad_of(ad.reduce_sum_squares, x), 2 * x)
    np.testing.assert_array_equal(grad_of(lambda t: ad.sum(Tensor(np.ones(3))), x), np.zeros(3))


def test_backward_rejects_vector_seed():
    with Tape() as tape:
        x = tape.watch(Tensor(np.ones(3)))
        y = ad.mul(x, 2.0)
    with pytest.raises(ValueError):
        tape.gradient(y, [x])


def test_gradient_shapes_match_parameters():
    rng = np.random.default_rng(4)
    w, b = rng.normal(size=(3, 5)), rng.normal(size=5)
    with Tape() as tape:
        wt, bt = tape.watch(Tensor(w)), tape.watch(Tensor(b))
        y = ad.reduce_sum_squares(ad.activation(ad.add(ad.matmul(np.ones((2, 3)), wt), bt), "tanh"))
    gw, gb = tape.gradient(y, [wt, bt])
    assert gw.shape == w.shape and gb.shape == b.shape


def _two_layer(w1, w2):
    def f(x):
        return ad.sum(ad.matmul(ad.activation(ad.matmul(x, w1), "tanh"), w2))

    return f


def test_two_layer_tanh_fd():
    rng = np.random.default_rng(5)
    f = _two_layer(rng.normal(size=(4, 6)), rng.normal(size=(6, 1)))
    assert finite_diff_check(f, rng.uniform(-1, 1, size=(3, 4))) <= 1e-5


def test_finite_diff_check_linear_and_quadratic():
    rng = np.random.default_rng(6)
    c = rng.normal(size=5)
    assert finite_diff_check(lambda x: ad.sum(ad.mul(x, c)), rng.normal(size=5)) <= 1e-9
    assert finite_diff_check(ad.reduce_sum_squares, rng.normal(size=5)) <= 1e-9


def test_finite_diff_check_deep_swish():
    rng = np.random.default_rng(7)
    ws = [rng.normal(size=(5, 5)) * 0.7 for _ in range(4)]

    def f(x):
        h = x
        for w in ws:
            h = ad.activation(ad.matmul(h, w), "swish")
        return ad.sum(h)

    assert finite_diff_check(f, rng.uniform(-1, 1, size=(2, 5))) <= 1e-5


PRIMITIVES = {
    "add": lambda x, c: ad.sum(ad.mul(ad.add(x, c), c)),
    "sub": lambda x, c: ad.sum(ad.mul(ad.sub(c, x), c)),
    "mul": lambda x, c: ad.sum(ad.mul(ad.mul(x, x), c)),
    "neg": lambda x, c: ad.sum(ad.mul(ad.neg(x), c)),
    "matmul": lambda x, c: ad.sum(ad.mul(ad.matmul(x, ad.transpose(x)), 1.0 + c[:, :3])),
    "reshape": lambda x, c: ad.sum(ad.mul(ad.reshape(x, (12,)), c.ravel())),
    "concat": lambda x, c: ad.reduce_sum_squares(ad.concat([x, ad.mul(x, c)], axis=-1)),
    "take": lambda x, c: ad.reduce_sum_squares(ad.take(x, (slice(None), slice(1, 3)))),
    "mean": lambda x, c: ad.mean(ad.mul(ad.mul(x, x), c)),
    "sum_axis": lambda x, c: ad.reduce_sum_squares(ad.sum(x, axis=0)),
    "elu": lambda x, c: ad.sum(ad.mul(ad.activation(x, "elu"), c)),
    "tanh": lambda x, c: ad.sum(ad.mul(ad.activation(x, "tanh"), c)),
    "swish": lambda x, c: ad.sum(ad.mul(ad.activation(x, "swish"), c)),
    "activation_grad": lambda x, c: ad.sum(ad.mul(ad.activation_grad(x, "swish"), c)),
    "conv_s1": lambda x, c: ad.sum(ad.mul(ad.conv1d_periodic(ad.reshape(x, (2, 6)), c.reshape(2, 2, 3)), 1.0)),
    "conv_s2": lambda x, c: ad.reduce_sum_squares(ad.conv1d_periodic(ad.reshape(x, (1, 12)), c[:1, :2].reshape(1, 1, 2), 2)),
    "upsample": lambda x, c: ad.reduce_sum_squares(ad.upsample2_smooth(ad.reshape(x, (2, 6)), c[:1, :4].reshape(1, 2, 2))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_fd(name):
    # 100 random trials per primitive, inputs in [-1, 1]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    f = PRIMITIVES[name]
    worst = 0.0
    for _ in range(100):
        c = rng.uniform(-1, 1, size=(3, 4))
        x = rng.uniform(-1, 1, size=(3, 4))
        worst = max(worst, finite_diff_check(lambda t: f(t, c), x))
    assert worst <= 1e-5


@settings(max_examples=20, deadline=None)
@given(
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    x=arrays(np.float64, 6, elements=st.floats(-1, 1)),
)
def test_backward_is_linear(a, b, x):
    f = lambda t: ad.reduce_sum_squares(ad.activation(t, "tanh"))  # noqa: E731
    g = lambda t: ad.sum(ad.activation(t, "swish"))  # noqa: E731
    combo = grad_of(lambda t: ad.add(ad.mul(f(t), a), ad.mul(g(t), b)), x)
    np.testing.assert_allclose(combo, a * grad_of(f, x) + b * grad_of(g, x), atol=1e-12)


def test_tape_replay_is_bit_identical():
    rng = np.random.default_rng(8)
    f = _two_layer(rng.normal(size=(4, 6)), rng.normal(size=(6, 1)))
    x = rng.normal(size=(3, 4))
    assert np.array_equal(grad_of(f, x), grad_of(f, x))


def test_tape_node_ids_increase_and_constants_untracked():
    with Tape() as tape:
        x = tape.watch(Tensor(np.ones(3)))
        c = ad.mul(np.ones(3), 2.0)
        y = ad.sum(ad.mul(x, c))
    assert c.node is None
    assert y.node == len(tape) - 1
    assert all(p is None or p < i for i, (_, ps) in enumerate(tape.nodes) for p in ps)


def test_ops_run_without_tape():
    out = ad.activation(ad.matmul(np.ones((2, 2)), np.ones((2, 1))), "tanh")
    assert out.node is None and out.shape == (2, 1)
