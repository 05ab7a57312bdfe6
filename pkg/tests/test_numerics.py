import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tinyvid import numerics as nx
from tinyvid.numerics import Tensor, vtf

OP_TOL = 1e-4


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    # a random projection makes every output entry matter in the scalar loss
    return nx.sum_(out * Tensor(w, dtype=np.float64))


def check_op(fn, inputs, rng, max_per_tensor=None):
    out_shape = fn().shape
    w = rng.standard_normal(out_shape)
    errs = nx.gradcheck(lambda: weighted_sum(fn(), w), inputs, max_per_tensor=max_per_tensor)
    assert max(errs.values()) < OP_TOL, errs


# ---------------------------------------------------------------------------
# forward oracles


def test_matmul_examples():
    m = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(nx.matmul(Tensor(np.eye(3)), Tensor(m)).data, m.astype(np.float32))
    out = nx.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nx.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nx.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_softmax_examples():
    assert np.allclose(nx.softmax(Tensor(np.full((2, 5), 3.0))).data, 0.2)
    out = nx.softmax(Tensor(np.array([0.0, math.log(3.0)]), dtype=np.float64)).data
    assert np.allclose(out, [0.25, 0.75], atol=1e-15)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = nx.softmax(Tensor(x, dtype=np.float64), axis=-1).data
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    assert (out >= 0).all()


def test_mse_examples():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert nx.mse(x, x).item() == 0.0
    assert nx.mse(Tensor([0.0, 0.0]), Tensor([1.0, 1.0])).item() == 1.0


def _naive_conv2d(x, w, b, padding):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh, ow = h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    out = np.zeros((n, cout, oh, ow))
    for a in range(n):
        for o in range(cout):
            for i in range(oh):
                for j in range(ow):
                    out[a, o, i, j] = np.sum(xp[a, :, i : i + k, j : j + k] * w[o]) + b[o]
    return out


def test_conv2d_matches_loop_oracle(rng):
    x, w, b = rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    for padding in (0, 1):
        got = nx.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64),
                        padding=padding).data
        assert np.allclose(got, _naive_conv2d(x, w, b, padding), atol=1e-12)


def test_conv1d_temporal_matches_loop_oracle(rng):
    x, w, b = rng.standard_normal((2, 3, 7)), rng.standard_normal((5, 3, 3)), rng.standard_normal(5)
    got = nx.conv1d_temporal(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                             Tensor(b, dtype=np.float64)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    want = np.zeros((2, 5, 7))
    for t in range(7):
        want[:, :, t] = np.einsum("nck,ock->no", xp[:, :, t : t + 3], w) + b
    assert np.allclose(got, want, atol=1e-12)


def test_group_norm_matches_direct_statistics(rng):
    x = rng.standard_normal((2, 6, 4, 3)) * 3 + 1
    gamma, beta = rng.standard_normal(6), rng.standard_normal(6)
    got = nx.group_norm(Tensor(x, dtype=np.float64), 3, Tensor(gamma, dtype=np.float64),
                        Tensor(beta, dtype=np.float64)).data
    want = np.empty_like(x)
    for n in range(2):
        for g in range(3):
            chunk = x[n, 2 * g : 2 * g + 2]
            want[n, 2 * g : 2 * g + 2] = (chunk - chunk.mean()) / np.sqrt(chunk.var() + 1e-5)
    want = want * gamma[None, :, None, None] + beta[None, :, None, None]
    assert np.allclose(got, want, atol=1e-12)


def test_group_norm_rejects_non_dividing_groups():
    with pytest.raises(nx.ShapeError):
        nx.group_norm(Tensor(np.zeros((1, 6, 2, 2))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))


def test_layer_norm_matches_direct_statistics(rng):
    x = rng.standard_normal((3, 5, 7))
    got = nx.layer_norm(Tensor(x, dtype=np.float64), Tensor(np.ones(7), dtype=np.float64),
                        Tensor(np.zeros(7), dtype=np.float64)).data
    want = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5)
    assert np.allclose(got, want, atol=1e-12)


@given(st.integers(0, 2), st.lists(st.integers(1, 4), min_size=3, max_size=3))
def test_mean_reduces_exactly_the_requested_axis(axis, shape):
    x = np.random.default_rng(0).standard_normal(shape)
    b = np.random.default_rng(1).standard_normal((1,) * 2 + (shape[2],))
    out = nx.mean(Tensor(x, dtype=np.float64) + Tensor(b, dtype=np.float64), axis=axis)
    assert np.allclose(out.data, (x + b).mean(axis=axis))
    assert out.shape == tuple(s for i, s in enumerate(shape) if i != axis)


# ---------------------------------------------------------------------------
# gradients against central differences


SEEDS = st.integers(0, 2**16)


@given(SEEDS)
def test_grad_elementwise(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 3, 4), leaf(rng, 1, 4)
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)
    with nx.default_dtype(np.float64):
        check_op(lambda: nx.add(a, b), [a, b], rng)
        check_op(lambda: nx.sub(a, b), [a, b], rng)
        check_op(lambda: nx.mul(a, b), [a, b], rng)
        check_op(lambda: nx.div(a, pos), [a, pos], rng)
        check_op(lambda: nx.silu(a), [a], rng)
        check_op(lambda: nx.exp(a), [a], rng)
        check_op(lambda: nx.square(a), [a], rng)


@given(SEEDS)
def test_grad_shape_ops(seed):
    rng = np.random.default_rng(seed)
    a, c = leaf(rng, 2, 3, 4), leaf(rng, 2, 2, 4)
    with nx.default_dtype(np.float64):
        check_op(lambda: nx.reshape(a, (6, 4)), [a], rng)
        check_op(lambda: nx.transpose(a, (2, 0, 1)), [a], rng)
        check_op(lambda: nx.getitem(a, (slice(None), slice(1, 3))), [a], rng)
        check_op(lambda: nx.getitem(a, (np.array([1, 0, 1]),)), [a], rng)
        check_op(lambda: nx.concat([a, c], axis=1), [a, c], rng)
        check_op(lambda: nx.broadcast_to(nx.getitem(a, (slice(0, 1),)), (3, 3, 4)), [a], rng)
        check_op(lambda: nx.sum_(a, axis=1, keepdims=True), [a], rng)
        check_op(lambda: nx.mean(a, axis=(0, 2)), [a], rng)
        check_op(lambda: nx.cast(a, np.float64), [a], rng)


@given(SEEDS)
def test_grad_matmul_linear_softmax(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 5, 4), leaf(rng, 4, 3)
    ba, bb = leaf(rng, 2, 3, 4), leaf(rng, 4, 2)
    w, bias = leaf(rng, 4, 3), leaf(rng, 3)
    s = leaf(rng, 3, 5, scale=2.0)
    with nx.default_dtype(np.float64):
        check_op(lambda: nx.matmul(a, b), [a, b], rng)
        check_op(lambda: nx.matmul(ba, bb), [ba, bb], rng)
        check_op(lambda: nx.linear(ba, w, bias), [ba, w, bias], rng)
        check_op(lambda: nx.softmax(s, axis=-1), [s], rng)
        check_op(lambda: nx.softmax(s, axis=0), [s], rng)


@given(SEEDS)
def test_grad_norms(seed):
    rng = np.random.default_rng(seed)
    x, g, b = leaf(rng, 2, 4, 3, 3, scale=2.0), leaf(rng, 4), leaf(rng, 4)
    y, lg, lb = leaf(rng, 3, 5), leaf(rng, 5), leaf(rng, 5)
    with nx.default_dtype(np.float64):
        check_op(lambda: nx.group_norm(x, 2, g, b), [x, g, b], rng)
        check_op(lambda: nx.layer_norm(y, lg, lb), [y, lg, lb], rng)


@given(SEEDS)
def test_grad_convolutions_and_resampling(seed):
    rng = np.random.default_rng(seed)
    x, w, b = leaf(rng, 2, 2, 5, 5), leaf(rng, 3, 2, 3, 3), leaf(rng, 3)
    x1, w1, b1 = leaf(rng, 2, 3, 6), leaf(rng, 2, 3, 3), leaf(rng, 2)
    p = leaf(rng, 2, 3, 4, 4)
    table = leaf(rng, 6, 3)
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    with nx.default_dtype(np.float64):
        check_op(lambda: nx.conv2d(x, w, b, padding=1), [x, w, b], rng)
        check_op(lambda: nx.conv2d(x, w, None, stride=2), [x, w], rng)
        check_op(lambda: nx.conv1d_temporal(x1, w1, b1), [x1, w1, b1], rng)
        check_op(lambda: nx.avg_pool2d(p, 2), [p], rng)
        check_op(lambda: nx.upsample_nearest2d(p, 2), [p], rng)
        check_op(lambda: nx.embedding(table, ids), [table], rng)


@given(SEEDS)
def test_grad_mse(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    errs = nx.gradcheck(lambda: nx.mse(a, b), [a, b])
    assert max(errs.values()) < OP_TOL


# ---------------------------------------------------------------------------
# backward contract


def test_sum_gradient_is_ones(rng):
    w = leaf(rng, 2, 3, 4)
    nx.sum_(w).backward()
    assert np.array_equal(w.grad, np.ones((2, 3, 4)))


def test_linear_regression_gradient_matches_closed_form(rng):
    X = rng.standard_normal((10, 3))
    y = rng.standard_normal((10, 1))
    w = leaf(rng, 3, 1)
    nx.mse(nx.matmul(Tensor(X, dtype=np.float64), w), Tensor(y, dtype=np.float64)).backward()
    closed = 2.0 * X.T @ (X @ w.data - y) / 10
    assert np.allclose(w.grad, closed, atol=1e-12)


def test_second_backward_is_an_error(rng):
    w = leaf(rng, 3)
    loss = nx.sum_(nx.square(w))
    loss.backward()
    with pytest.raises(nx.GraphError):
        loss.backward()


def test_backward_requires_scalar(rng):
    w = leaf(rng, 3)
    with pytest.raises(nx.GraphError, match="scalar"):
        nx.square(w).backward()


def test_backward_on_detached_value_is_an_error(rng):
    w = leaf(rng, 3)
    with pytest.raises(nx.GraphError):
        nx.sum_(w).detach().backward()


def test_shared_subexpression_accumulates(rng):
    w = leaf(rng, 4)
    h = nx.square(w)
    nx.sum_(h + h).backward()
    assert np.allclose(w.grad, 4 * w.data)


def test_non_finite_values_are_surfaced():
    with nx.check_finite(True):
        with pytest.raises(nx.NonFiniteError):
            nx.div(Tensor([1.0]), Tensor([0.0]))
    with nx.check_finite(False), np.errstate(divide="ignore"):
        assert np.isinf(nx.div(Tensor([1.0]), Tensor([0.0])).data).all()


def test_grad_shape_matches_data(rng):
    a, b = leaf(rng, 3, 1), leaf(rng, 1, 4)
    nx.sum_(a * b).backward()
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_forward_is_bitwise_deterministic(rng):
    x = Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
    one = nx.conv2d(x, w, padding=1).data
    two = nx.conv2d(x, w, padding=1).data
    assert one.tobytes() == two.tobytes()


# ---------------------------------------------------------------------------
# VTF


def test_vtf_layout_is_exact():
    buf = vtf.to_bytes(np.array([[1.0, 2.0, 3.0]]))
    assert buf[:4] == b"VTF1"
    assert struct.unpack("<III", buf[4:16]) == (2, 1, 3)
    assert struct.unpack("<3f", buf[16:]) == (1.0, 2.0, 3.0)


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=5, max_side=4),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_vtf_round_trip(arr):
    back = vtf.from_bytes(vtf.to_bytes(arr))
    assert back.dtype == np.float32 and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_vtf_rejects_bad_input(tmp_path):
    good = vtf.to_bytes(np.zeros((2, 2)))
    with pytest.raises(vtf.VTFError):
        vtf.from_bytes(b"XXXX" + good[4:])
    with pytest.raises(vtf.VTFError):
        vtf.from_bytes(good[:-1])
    path = tmp_path / "a.vtf"
    vtf.save(path, np.ones(3))
    assert np.array_equal(vtf.load(path), np.ones(3, dtype=np.float32))
