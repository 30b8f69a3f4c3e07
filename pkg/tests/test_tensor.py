import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetgnn import ops
from hetgnn.errors import ShapeError
from hetgnn.gradcheck import finite_diff_check
from hetgnn.tensor import Tape, Tensor, backward


def grads_of(fn, *tensors):
    with Tape() as tape:
        loss = fn()
    return backward(tape, loss, tensors)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    assert np.array_equal(ops.matmul(Tensor(np.eye(3)), x).data, x.data)


def test_softmax_symmetric_pair():
    assert np.array_equal(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_scatter_mean_buckets():
    out = ops.scatter_mean(Tensor([[2.0], [4.0], [10.0]]), [0, 0, 1], 3)
    assert np.array_equal(out.data, [[3.0], [10.0], [0.0]])


def test_linear_matches_definition(rng):
    x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3)), rng.normal(size=4)
    out = ops.linear(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(out, x @ w.T + b, rtol=0, atol=1e-14)


@pytest.mark.parametrize(
    "call, kernel",
    [
        (lambda: ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3)))), "matmul"),
        (lambda: ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,)))), "add"),
        (lambda: ops.mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2)))), "mul"),
        (lambda: ops.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5)))), "linear"),
        (lambda: ops.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))]), "concat"),
        (lambda: ops.scatter_mean(Tensor(np.ones((3, 2))), [0, 1], 2), "scatter_mean"),
    ],
)
def test_shape_errors_name_the_kernel_and_shapes(call, kernel):
    with pytest.raises(ShapeError) as info:
        call()
    msg = str(info.value)
    assert msg.startswith(kernel)
    assert "(" in msg and ")" in msg


@pytest.mark.parametrize("op", [ops.softmax, lambda x: ops.layer_norm(x, Tensor(np.ones(0)), Tensor(np.zeros(0)))])
def test_empty_reduction_axis_rejected(op):
    with pytest.raises(ShapeError):
        op(Tensor(np.zeros((2, 0))))


def test_backward_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    g = grads_of(lambda: ops.sum(ops.mul(x, x)), x)
    assert np.array_equal(g[x], [2.0, 4.0])


def test_backward_mean():
    x = Tensor(np.arange(4.0), requires_grad=True)
    assert np.array_equal(grads_of(lambda: ops.mean(x), x)[x], [0.25] * 4)


def test_unused_parameter_gets_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor(np.ones((2, 3)), requires_grad=True)
    g = grads_of(lambda: ops.sum(x), x, unused)
    assert g[unused].shape == (2, 3)
    assert not g[unused].any()


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, 2.0)
    with pytest.raises(ShapeError, match="scalar"):
        backward(tape, y)


def test_tensor_consumed_twice_sums_contributions(rng):
    w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 3)))

    def branch():
        return ops.sum(ops.relu(ops.linear(x, w)))

    single = grads_of(branch, w)[w]
    double = grads_of(lambda: ops.add(branch(), ops.mul(ops.sum(ops.linear(x, w)), 3.0)), w)[w]
    extra = grads_of(lambda: ops.mul(ops.sum(ops.linear(x, w)), 3.0), w)[w]
    np.testing.assert_allclose(double, single + extra, rtol=0, atol=1e-12)


def test_tape_replays_in_reverse_order():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        a = ops.mul(x, 2.0)
        b = ops.add(a, 1.0)
        c = ops.sum(b)
    assert [r.op for r in tape.records] == ["mul", "add", "sum"]
    assert [r.output for r in reversed(tape.records)] == [c, b, a]
    assert np.array_equal(backward(tape, c)[x], [2.0])


def test_tensors_are_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_nothing_recorded_without_tape():
    x = Tensor([1.0], requires_grad=True)
    y = ops.mul(x, 2.0)
    assert not y.requires_grad


def _unit(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def kernel_case(kernel, rng):
    """Parameters and a scalar loss that routes gradients through one kernel."""
    if kernel == "add":
        a, b = _unit(rng, 3, 4), _unit(rng, 4)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.add(a, b), a))
    if kernel == "sub":
        a, b = _unit(rng, 2, 3), _unit(rng, 1, 3)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.sub(a, b), a))
    if kernel == "mul":
        a, b = _unit(rng, 2, 3), _unit(rng, 3)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.mul(a, b), a))
    if kernel == "matmul":
        a, b = _unit(rng, 2, 3, 4), _unit(rng, 2, 4, 2)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.matmul(a, b), ops.matmul(a, b)))
    if kernel == "linear":
        x, w, bias = _unit(rng, 5, 3), _unit(rng, 4, 3), _unit(rng, 4)
        return {"x": x, "w": w, "bias": bias}, lambda: ops.sum(ops.mul(ops.linear(x, w, bias), ops.linear(x, w, bias)))
    if kernel == "relu":
        a = Tensor(rng.uniform(0.2, 1, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4)), requires_grad=True)
        return {"a": a}, lambda: ops.sum(ops.mul(ops.relu(a), a))
    if kernel == "softmax":
        a, b = _unit(rng, 3, 5), _unit(rng, 3, 5)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.softmax(a), b))
    if kernel == "layer_norm":
        x, gamma, beta = _unit(rng, 4, 6), _unit(rng, 6), _unit(rng, 6)
        return {"x": x, "gamma": gamma, "beta": beta}, \
            lambda: ops.sum(ops.mul(ops.layer_norm(x, gamma, beta), ops.layer_norm(x, gamma, beta)))
    if kernel == "concat":
        a, b = _unit(rng, 2, 3), _unit(rng, 4, 3)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.concat([a, b, a]), ops.concat([b, a, a])))
    if kernel == "mean":
        a, b = _unit(rng, 3, 4), _unit(rng, 4)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.mean(a, axis=0), b))
    if kernel == "scatter_mean":
        a, b = _unit(rng, 6, 3), _unit(rng, 4, 3)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.scatter_mean(a, [0, 2, 2, 1, 0, 2], 4), b))
    if kernel == "gather_rows":
        a, b = _unit(rng, 4, 3), _unit(rng, 5, 3)
        return {"a": a, "b": b}, lambda: ops.sum(ops.mul(ops.gather_rows(a, [0, 3, 3, 1, 0]), b))
    if kernel == "cross_entropy":
        a, b = _unit(rng, 4, 5), _unit(rng, 5)
        return {"a": a, "b": b}, lambda: ops.cross_entropy(ops.add(a, b), [0, 4, 2, 2])
    raise KeyError(kernel)


KERNELS = ["add", "sub", "mul", "matmul", "linear", "relu", "softmax", "layer_norm",
           "concat", "mean", "scatter_mean", "gather_rows", "cross_entropy"]


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_kernel_gradients_match_finite_differences(kernel, seed):
    params, f = kernel_case(kernel, np.random.default_rng(seed))
    assert finite_diff_check(f, params, eps=1e-5).max_rel_error < 1e-4


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    rows = ops.softmax(Tensor(x)).data.sum(axis=-1)
    assert np.all(np.abs(rows - 1.0) <= 1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 16)), elements=finite))
def test_layer_norm_standardises_rows(x):
    width = x.shape[1]
    out = ops.layer_norm(Tensor(x), Tensor(np.ones(width)), Tensor(np.zeros(width))).data
    v = x.var(axis=1)
    # rounding of the row mean (a few ulp of |x|) is amplified by 1/sqrt(v + eps)
    slack = 16 * np.finfo(float).eps * (1 + np.abs(x).max(axis=1)) / np.sqrt(v + ops.LAYER_NORM_EPS)
    assert np.all(np.abs(out.mean(axis=1)) <= slack)
    # eps shrinks the variance to exactly v / (v + eps)
    expected = v / (v + ops.LAYER_NORM_EPS)
    assert np.all(np.abs(out.var(axis=1) - expected) <= 2 * slack)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_matmul_identity_both_sides(x):
    left = ops.matmul(Tensor(np.eye(x.shape[0])), Tensor(x)).data
    right = ops.matmul(Tensor(x), Tensor(np.eye(x.shape[1]))).data
    assert np.array_equal(left, x) and np.array_equal(right, x)


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(1, 5), st.data())
def test_scatter_mean_matches_loop(n_rows, n_targets, data):
    values = data.draw(arrays(np.float64, (n_rows, 3), elements=finite))
    index = data.draw(st.lists(st.integers(0, n_targets - 1), min_size=n_rows, max_size=n_rows))
    out = ops.scatter_mean(Tensor(values), index, n_targets).data
    for t in range(n_targets):
        rows = [values[i] for i in range(n_rows) if index[i] == t]
        expected = np.mean(rows, axis=0) if rows else np.zeros(3)
        np.testing.assert_allclose(out[t], expected, rtol=1e-12, atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_forward_kernels_stay_finite(x):
    t = Tensor(x)
    width = x.shape[1]
    outs = [ops.relu(t), ops.softmax(t), ops.layer_norm(t, Tensor(np.ones(width)), Tensor(np.zeros(width))),
            ops.mean(t, axis=0), ops.matmul(t, ops.transpose(t, (1, 0)))]
    assert all(np.all(np.isfinite(o.data)) for o in outs)


@pytest.mark.parametrize(
    "logits, label, expected",
    [
        ([0.0] * 6, 3, math.log(6)),
        ([10.0, -10.0], 0, math.log1p(math.exp(-20.0))),
        ([0.0, 0.0], 1, math.log(2)),
    ],
)
def test_cross_entropy_closed_forms(logits, label, expected):
    assert ops.cross_entropy(Tensor(logits), label).item() == pytest.approx(expected, rel=1e-12)


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(ValueError, match="label"):
        ops.cross_entropy(Tensor([0.0, 1.0]), 2)
