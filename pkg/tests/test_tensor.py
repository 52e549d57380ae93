import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import graphdn.tensor as T
from graphdn.errors import AutodiffError, NumericError, ShapeError
from graphdn.tensor import Tape, Tensor, finite_difference_check

from oracles import naive_batch_norm_train, naive_conv2d, naive_leaky_relu


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# --------------------------------------------------------------------------
# frozen worked examples

def test_conv2d_raster_center_value():
    # 3x3 image holding 1..9 under a uniform averaging kernel: the center
    # output is the mean of all nine values, 5.0
    x = Tensor(np.arange(1.0, 10.0).reshape(1, 1, 3, 3))
    kern = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0))
    out = T.conv2d(x, kern)
    assert out.data[0, 0, 1, 1] == pytest.approx(5.0, abs=1e-12)


def test_batch_norm_two_element_batch():
    # values {0, 2} in one channel normalize to {-1, +1} (up to eps)
    x = Tensor(np.array([0.0, 2.0]).reshape(2, 1, 1, 1))
    out = T.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), None, None)
    assert out.data.reshape(-1) == pytest.approx([-1.0, 1.0], abs=1e-4)


def test_grad_of_scaled_mse():
    # L(w) = mean((w*x - y)^2) with x=2, y=0: dL/dw at w=1 is 2*w*x*x = 8
    w = Tensor(np.array(1.0), requires_grad=True)
    x = Tensor(np.array(2.0))
    y = Tensor(np.array(0.0))
    with Tape():
        loss = T.mse(T.mul(w, x), y)
        loss.backward()
    assert w.grad == pytest.approx(8.0, abs=1e-12)


def test_sum_all_backward_is_ones():
    x = _rand(np.random.default_rng(0), 3, 4)
    with Tape():
        T.sum_all(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_matmul_identity():
    rng = np.random.default_rng(1)
    a = Tensor(rng.standard_normal((4, 4)))
    out = T.matmul(a, Tensor(np.eye(4)))
    assert np.array_equal(out.data, a.data)


# --------------------------------------------------------------------------
# forward semantics against naive oracles

def test_conv2d_matches_naive_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 6, 5))
    kern = rng.standard_normal((4, 3, 3, 3))
    bias = rng.standard_normal(4)
    fast = T.conv2d(Tensor(x), Tensor(kern), Tensor(bias)).data
    assert np.allclose(fast, naive_conv2d(x, kern, bias), atol=1e-12)


def test_conv2d_5x5_kernel_matches_naive_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 7, 7))
    kern = rng.standard_normal((3, 2, 5, 5))
    fast = T.conv2d(Tensor(x), Tensor(kern)).data
    assert np.allclose(fast, naive_conv2d(x, kern), atol=1e-12)


def test_conv2d_rejects_wrong_padding():
    x = Tensor(np.zeros((1, 1, 4, 4)))
    kern = Tensor(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        T.conv2d(x, kern, padding=0)


def test_batch_norm_matches_naive_oracle():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 4, 5, 5))
    scale = rng.standard_normal(4)
    shift = rng.standard_normal(4)
    fast = T.batch_norm(Tensor(x), Tensor(scale), Tensor(shift), None, None).data
    ref, _, _ = naive_batch_norm_train(x, scale, shift)
    assert np.allclose(fast, ref, atol=1e-10)


def test_batch_norm_running_update_uses_biased_variance():
    x = np.array([0.0, 2.0]).reshape(2, 1, 1, 1)
    rm, rv = np.zeros(1), np.ones(1)
    T.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv,
                 momentum=0.9)
    assert rm[0] == pytest.approx(0.1 * 1.0)       # batch mean 1
    assert rv[0] == pytest.approx(0.9 + 0.1 * 1.0)  # biased batch var 1


def test_batch_norm_inference_requires_stats():
    x = Tensor(np.zeros((1, 2, 2, 2)))
    with pytest.raises(NumericError):
        T.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), None, None,
                     mode="inference")


def test_leaky_relu_values():
    x = Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 3.0]))
    out = T.leaky_relu(x, 0.2).data
    assert np.allclose(out, naive_leaky_relu(x.data, 0.2))
    assert out[2] == 0.0


def test_gather_rows_backward_scatter_adds():
    x = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    idx = np.array([0, 0, 3])
    with Tape():
        T.sum_all(T.gather_rows(x, idx)).backward()
    expect = np.array([[2.0, 2.0], [0, 0], [0, 0], [1.0, 1.0]])
    assert np.array_equal(x.grad, expect)


def test_mean_axis_and_reshape_round_trip():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4, 2))
    out = T.mean_axis(Tensor(x), 1)
    assert np.allclose(out.data, x.mean(axis=1))
    back = T.reshape(T.transpose(Tensor(x), (2, 0, 1)), (2, 12))
    assert back.shape == (2, 12)


def test_concat_and_slice_channels():
    a = Tensor(np.ones((2, 3, 3)))
    b = Tensor(np.zeros((1, 3, 3)))
    cat = T.concat_channels([a, b])
    assert cat.shape == (3, 3, 3)
    assert np.array_equal(T.slice_channels(cat, 2, 3).data, b.data)


# --------------------------------------------------------------------------
# tape behavior

def test_backward_without_tape_raises():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = T.scale(x, 2.0)  # no tape active: not recorded
    with pytest.raises(AutodiffError):
        y.backward()


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = T.scale(x, 2.0)
        with pytest.raises(ShapeError):
            y.backward()


def test_tape_consumed_once():
    x = Tensor(np.array(2.0), requires_grad=True)
    with Tape() as tape:
        loss = T.mul(x, x)
        loss.backward()
    with pytest.raises(AutodiffError):
        tape.backward(loss)


def test_shared_subexpression_accumulates():
    # y = x*x + x*x: dy/dx = 4x
    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape():
        sq = T.mul(x, x)
        T.add(sq, sq).backward()
    assert x.grad == pytest.approx(12.0)


def test_detach_blocks_gradient():
    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape():
        y = T.mul(x, x)
        loss = T.mul(y.detach(), x)
        loss.backward()
    assert x.grad == pytest.approx(9.0)  # only the direct factor, not through y


def test_nan_input_raises_numeric_error():
    x = Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NumericError):
        T.scale(x, 2.0)


def test_zero_grads():
    x = Tensor(np.array(2.0), requires_grad=True)
    with Tape():
        T.mul(x, x).backward()
    assert x.grad is not None
    T.zero_grads({"x": x})
    assert x.grad is None


def test_mixed_dtypes_rejected():
    a = Tensor(np.zeros(2, dtype=np.float32))
    b = Tensor(np.zeros(2, dtype=np.float64))
    with pytest.raises(ShapeError):
        T.add(a, b)


# --------------------------------------------------------------------------
# finite differences on individual ops

def _fd(f, params):
    report = finite_difference_check(f, params)
    assert report.passed, str(report)
    return report


def test_fd_linear():
    rng = np.random.default_rng(6)
    x, w, b = _rand(rng, 5, 3), _rand(rng, 4, 3), _rand(rng, 4)
    target = Tensor(rng.standard_normal((5, 4)))
    _fd(lambda: T.mse(T.linear(x, w, b), target), {"x": x, "w": w, "b": b})


def test_fd_conv2d():
    rng = np.random.default_rng(7)
    x, k, b = _rand(rng, 2, 2, 5, 5), _rand(rng, 3, 2, 3, 3), _rand(rng, 3)
    target = Tensor(rng.standard_normal((2, 3, 5, 5)))
    _fd(lambda: T.mse(T.conv2d(x, k, b), target), {"x": x, "k": k, "b": b})


def test_fd_batch_norm():
    rng = np.random.default_rng(8)
    x, s, h = _rand(rng, 2, 3, 4, 4), _rand(rng, 3), _rand(rng, 3)
    target = Tensor(rng.standard_normal((2, 3, 4, 4)))
    _fd(lambda: T.mse(T.batch_norm(x, s, h, None, None), target),
        {"x": x, "scale": s, "shift": h})


def test_fd_through_transpose_reshape_concat():
    rng = np.random.default_rng(9)
    a, b = _rand(rng, 2, 3), _rand(rng, 2, 3)
    target = Tensor(rng.standard_normal((3, 4)))

    def f():
        cat = T.concat([a, b], axis=0)            # [4, 3]
        return T.mse(T.transpose(cat, (1, 0)), target)

    _fd(f, {"a": a, "b": b})


def test_fd_rejects_float32():
    x = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(NumericError):
        finite_difference_check(lambda: T.sum_all(x), {"x": x})


# --------------------------------------------------------------------------
# properties

@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_finite_in_finite_out(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    k = Tensor(rng.standard_normal((3, 3, 3, 3)))
    out = T.leaky_relu(T.batch_norm(T.conv2d(x, k), Tensor(np.ones(3)),
                                    Tensor(np.zeros(3)), None, None))
    assert np.all(np.isfinite(out.data))


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_gradient_shapes_match_parameters(seed):
    rng = np.random.default_rng(seed)
    x = _rand(rng, 3, 4)
    w = _rand(rng, 2, 4)
    with Tape():
        T.sum_all(T.linear(x, w)).backward()
    assert x.grad.shape == x.shape
    assert w.grad.shape == w.shape
