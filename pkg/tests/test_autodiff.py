import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pacfno.autodiff import (
    BnState,
    GraphError,
    OptimState,
    ShapeError,
    Tensor,
    adam_step,
    add,
    backward,
    batch_norm,
    build_tape,
    channel_linear,
    conv2d_3x3,
    cross_entropy,
    gelu,
    grad_check,
    linear,
    mean,
    mul,
    reshape,
    scale,
    sub,
    tsum,
)

RNG = np.random.default_rng(1234)


def leaf(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- elementwise


def test_add_values():
    assert np.array_equal(add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])


def test_mul_by_zeros_annihilates():
    x = Tensor(RNG.normal(size=(3, 4)))
    assert not mul(x, Tensor(np.zeros((3, 4)))).data.any()


def test_grad_of_sum_mul_is_other_operand():
    a, b = leaf(RNG.normal(size=5)), leaf(RNG.normal(size=5))
    backward(tsum(mul(a, b)))
    assert np.allclose(a.grad, b.data, atol=1e-14)
    assert grad_check(lambda: tsum(mul(a, b)), [a], h=1e-6) < 1e-8


def test_broadcast_along_leading_extent_and_scalar():
    a = leaf(RNG.normal(size=(2, 3)))
    b = leaf(RNG.normal(size=3))
    c = leaf(2.0)
    assert grad_check(lambda: tsum(mul(sub(a, b), c)), [a, b, c]) < 1e-9


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


# ---------------------------------------------------------------- channel_linear


def test_channel_linear_identity():
    x = Tensor(RNG.normal(size=(2, 3, 4, 4)))
    out = channel_linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x.data)


def test_channel_linear_row_sum():
    out = channel_linear(Tensor(np.ones((1, 3, 2, 2))), Tensor(np.ones((1, 3))), Tensor(np.zeros(1)))
    assert np.array_equal(out.data, np.full((1, 1, 2, 2), 3.0))


def test_channel_linear_weight_grad():
    x = leaf(RNG.normal(size=(2, 3, 4, 4)))
    w, b = leaf(RNG.normal(size=(3, 3))), leaf(RNG.normal(size=3))
    assert grad_check(lambda: tsum(channel_linear(x, w, b)), [x, w, b]) < 1e-5


def test_channel_linear_mismatch():
    with pytest.raises(ShapeError):
        channel_linear(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((3, 3))))


# ---------------------------------------------------------------- gelu


def test_gelu_values():
    assert gelu(Tensor(0.0)).data == 0.0
    assert gelu(Tensor(1.0)).data == pytest.approx(0.8413447460685429, abs=1e-12)
    tail = gelu(Tensor(-10.0)).data
    assert np.isfinite(tail) and tail == pytest.approx(-7.619853024160527e-23, rel=1e-9)


def test_gelu_grad():
    x = leaf(RNG.normal(size=(3, 5)) * 3)
    assert grad_check(lambda: tsum(gelu(x)), [x]) < 1e-8


# ---------------------------------------------------------------- batch norm


def test_bn_constant_channel_maps_to_beta():
    st_ = BnState.create(3)
    st_.beta.data[:] = [0.5, -1.0, 2.0]
    x = Tensor(np.broadcast_to(np.array([1.0, 2.0, 3.0])[None, :, None, None], (2, 3, 4, 4)).copy())
    out = batch_norm(x, st_, training=True)
    assert np.allclose(out.data, st_.beta.data[None, :, None, None], atol=1e-12)


def test_bn_training_statistics():
    # output variance is var / (var + eps); std 5 keeps the eps shortfall below 1e-6
    out = batch_norm(Tensor(RNG.normal(3, 5, size=(4, 3, 5, 5))), BnState.create(3), training=True).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-10
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-6


def test_bn_grad():
    st_ = BnState.create(3)
    st_.gamma.data[:] = RNG.normal(size=3)
    st_.beta.data[:] = RNG.normal(size=3)
    x = leaf(RNG.normal(size=(2, 3, 4, 4)))
    w = Tensor(RNG.normal(size=(2, 3, 4, 4)))
    assert grad_check(lambda: tsum(mul(batch_norm(x, st_, True), w)), [x, st_.gamma, st_.beta]) < 1e-4


def test_bn_running_stats_and_eval_affine():
    st_ = BnState.create(2)
    x = RNG.normal(1, 3, size=(4, 2, 3, 3))
    batch_norm(Tensor(x), st_, training=True)
    assert np.allclose(st_.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(st_.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))
    # eval mode is a per-channel affine map and leaves statistics untouched
    before = st_.running_mean.copy()
    a = batch_norm(Tensor(x), st_, training=False).data
    b = batch_norm(Tensor(2 * x), st_, training=False).data
    zero = batch_norm(Tensor(np.zeros_like(x)), st_, training=False).data
    assert np.allclose(b - zero, 2 * (a - zero))
    assert np.array_equal(st_.running_mean, before)


def test_bn_empty_batch():
    with pytest.raises(ShapeError):
        batch_norm(Tensor(np.zeros((0, 3, 2, 2))), BnState.create(3), training=True)


# ---------------------------------------------------------------- cross entropy


def test_ce_uniform():
    assert cross_entropy(Tensor([[0.0, 0.0]]), [0]).data == pytest.approx(math.log(2), abs=1e-15)


def test_ce_saturated():
    loss = cross_entropy(Tensor([[100.0, 0.0]]), [0]).data
    assert np.isfinite(loss) and 0 <= loss < 1e-40


def test_ce_grad_is_softmax_minus_onehot():
    z = leaf(RNG.normal(size=(4, 10)))
    y = [1, 3, 9, 0]
    backward(cross_entropy(z, y))
    p = np.exp(z.data - z.data.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(4), y] -= 1
    assert np.allclose(z.grad, p / 4, atol=1e-15)
    assert grad_check(lambda: cross_entropy(z, y), [z]) < 1e-6


def test_ce_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((1, 3))), [3])


# ---------------------------------------------------------------- backward and tape


def test_backward_sum_and_square():
    x = leaf([0.0] * 5)
    backward(tsum(x))
    assert np.array_equal(x.grad, np.ones(5))
    y = leaf([1.0, 2.0, 3.0])
    backward(tsum(mul(y, y)))
    assert np.array_equal(y.grad, [2.0, 4.0, 6.0])


def test_backward_errors():
    x = leaf([1.0, 2.0])
    with pytest.raises(GraphError, match="scalar"):
        backward(mul(x, x))
    loss = tsum(mul(x, x))
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_tape_is_topological():
    x = leaf(RNG.normal(size=3))
    y = mul(x, x)
    loss = tsum(add(y, gelu(y)))
    tape = build_tape(loss)
    position = {id(t): i for i, t in enumerate(tape.nodes)}
    for t in tape.nodes:
        for p in t._parents:
            assert position[id(p)] < position[id(t)]
    assert len({id(t) for t in tape.nodes}) == len(tape.nodes)


def test_linear_and_conv_grads():
    x = leaf(RNG.normal(size=(2, 3, 6, 6)))
    w = leaf(RNG.normal(size=(4, 3, 3, 3)) * 0.3)
    b = leaf(RNG.normal(size=4))
    assert grad_check(lambda: tsum(mul(conv2d_3x3(x, w, b), conv2d_3x3(x, w, b))), [x, w, b]) < 1e-6
    v = leaf(RNG.normal(size=(5, 7)))
    lw, lb = leaf(RNG.normal(size=(3, 7))), leaf(RNG.normal(size=3))
    assert grad_check(lambda: cross_entropy(linear(v, lw, lb), [0, 1, 2, 0, 1]), [v, lw, lb]) < 1e-6


# ---------------------------------------------------------------- grad_check


def test_grad_check_trivial_sum():
    x = leaf(RNG.normal(size=(4, 4)))
    assert grad_check(lambda: tsum(x), [x]) < 1e-10


def test_grad_check_ce_of_channel_linear():
    x = leaf(RNG.normal(size=(4, 3, 1, 1)))
    w, b = leaf(RNG.normal(size=(5, 3))), leaf(RNG.normal(size=5))

    def f():
        return cross_entropy(reshape(channel_linear(x, w, b), (4, 5)), [0, 1, 4, 2])

    assert grad_check(f, [x, w, b]) < 1e-6


def test_grad_check_step_bounds():
    x = leaf([1.0])
    for h in (1e-8, 1e-3):
        with pytest.raises(ValueError):
            grad_check(lambda: tsum(x), [x], h=h)


# ---------------------------------------------------------------- adam


def test_adam_zero_grad_leaves_params():
    p = leaf(RNG.normal(size=4))
    before = p.data.copy()
    p.grad = np.zeros(4)
    adam_step([p], OptimState(lr=0.1))
    assert np.array_equal(p.data, before)


def test_adam_first_step_moves_by_lr():
    p = leaf([1.0])
    p.grad = np.array([1.0])
    adam_step([p], OptimState(lr=0.1))
    assert p.data[0] == pytest.approx(0.9, abs=1e-7)


def test_adam_twins_stay_identical():
    a, b = leaf([0.3, -0.2]), leaf([0.3, -0.2])
    st_ = OptimState(lr=0.01)
    for k in range(100):
        g = np.array([math.sin(k), math.cos(k)])
        a.grad, b.grad = g.copy(), g.copy()
        adam_step([a, b], st_)
    assert np.array_equal(a.data, b.data)
    assert st_.step == 100


def test_adam_shape_mismatch():
    p = leaf([1.0, 2.0])
    p.grad = np.ones(3)
    with pytest.raises(ShapeError):
        adam_step([p], OptimState())


# ---------------------------------------------------------------- properties

finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       st.floats(-3, 3), st.floats(-3, 3))
def test_backward_is_linear(x0, w, alpha, beta):
    def grads(loss_fn):
        x = Tensor(x0.copy(), requires_grad=True)
        backward(loss_fn(x))
        return x.grad

    l1 = lambda x: tsum(mul(gelu(x), Tensor(w)))  # noqa: E731
    l2 = lambda x: mean(mul(x, x))  # noqa: E731
    both = grads(lambda x: add(scale(l1(x), alpha), scale(l2(x), beta)))
    assert np.allclose(both, alpha * grads(l1) + beta * grads(l2), atol=1e-12, rtol=0)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 3, 3, 3), elements=finite), st.integers(0, 2**31))
def test_forward_is_deterministic(x, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 3))
    run = lambda: gelu(channel_linear(Tensor(x), Tensor(w))).data  # noqa: E731
    assert np.array_equal(run(), run())
