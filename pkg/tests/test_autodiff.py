import gc

import numpy as np
import pytest
from scipy import signal

from kslab import autodiff as ad


def numeric_grad(fn, value, h=1e-6):
    grad = np.zeros_like(value)
    flat = value.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(value)
        flat[i] = orig - h
        down = fn(value)
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def check(build, *values, tol=1e-6):
    """Compare tape gradients of scalar ``build(*vars)`` with central differences."""
    tape = ad.Tape()
    vars_ = [tape.variable(v) for v in values]
    out = build(*vars_)
    grads = tape.gradient(out, vars_)
    for i, v in enumerate(values):
        def fn(x, i=i):
            t = ad.Tape(record=False)
            args = [t.variable(x if j == i else values[j]) for j in range(len(values))]
            return float(build(*args).value)

        np.testing.assert_allclose(grads[i], numeric_grad(fn, v.copy()), rtol=tol, atol=tol)


def conv_oracle(x, weight, bias):
    # Independent reference: scipy's 2D correlation per (out, in) channel pair.
    c_out = weight.shape[0]
    _, b, h, w = x.shape
    out = np.zeros((c_out, b, h, w))
    for o in range(c_out):
        for n in range(b):
            acc = sum(signal.correlate2d(x[i, n], weight[o, i], mode="same") for i in range(x.shape[0]))
            out[o, n] = acc + bias[o]
    return out


@pytest.mark.parametrize("c_in,c_out,k", [(3, 5, 3), (4, 2, 5), (2, 2, 1)])
def test_conv2d_matches_scipy(rng, c_in, c_out, k):
    x = rng.standard_normal((c_in, 2, 7, 9))
    weight = rng.standard_normal((c_out, c_in, k, k))
    bias = rng.standard_normal(c_out)
    tape = ad.Tape()
    out = ad.conv2d(tape.variable(x), tape.variable(weight), tape.variable(bias))
    np.testing.assert_allclose(out.value, conv_oracle(x, weight, bias), atol=1e-12)


@pytest.mark.parametrize("c_in,c_out", [(3, 2), (2, 3)])
def test_conv2d_gradients(rng, c_in, c_out):
    x = rng.standard_normal((c_in, 2, 5, 6))
    weight = rng.standard_normal((c_out, c_in, 3, 3))
    bias = rng.standard_normal(c_out)
    probe = rng.standard_normal((c_out, 2, 5, 6))
    check(lambda a, w, b: ad.total(ad.conv2d(a, w, b) * probe), x, weight, bias)


def test_conv2d_large_input_uses_several_row_blocks(rng):
    x = rng.standard_normal((16, 1, 70, 70))
    weight = rng.standard_normal((4, 16, 3, 3))
    tape = ad.Tape()
    out = ad.conv2d(tape.variable(x), tape.variable(weight), tape.variable(np.zeros(4)))
    np.testing.assert_allclose(out.value, conv_oracle(x, weight, np.zeros(4)), atol=1e-10)


def test_elementwise_ops(rng):
    a = rng.standard_normal((3, 4))
    b = rng.uniform(0.5, 2.0, (3, 4))
    row = rng.standard_normal(4)
    check(lambda x, y: ad.total(x * y + x / y - y), a, b)
    check(lambda x, y: ad.total((x - y) * 2.0 + 1.0 / y), a, b)
    check(lambda x, r: ad.mean(x * r), a, row)  # broadcasting
    check(lambda x: ad.total(ad.sigmoid(x) * ad.tanh(x)), a)
    check(lambda x: ad.total(-x[1:, :2] * 3.0), a)


def test_piecewise_ops_away_from_kinks(rng):
    a = rng.standard_normal((4, 5))
    a[np.abs(a) < 0.05] = 0.3
    check(lambda x: ad.total(ad.relu(x) * ad.absolute(x)), a)


def test_concat_magnitude_and_filter(rng):
    a = rng.standard_normal((2, 3, 13, 13))
    b = rng.standard_normal((1, 3, 13, 13))
    taps = np.array([0.25, 0.5, 0.25])
    check(lambda x, y: ad.total(ad.concat([x, y, np.ones((1, 3, 13, 13))]) * np.arange(4.0)[:, None, None, None]), a, b)
    check(lambda x: ad.total(ad.magnitude(x)), a)
    check(lambda x: ad.total(ad.filter_valid(x, taps) * x[..., 1:-1, 1:-1]), a)


def test_linear_uses_supplied_transpose(rng):
    m = rng.standard_normal((4, 3))
    v = rng.standard_normal(3)
    check(lambda x: ad.total(ad.linear(x, lambda z: m @ z, lambda g: m.T @ g, np.ones(4)) * np.arange(4.0)), v)


def test_gradient_accumulates_over_fan_out(rng):
    a = rng.standard_normal(3)
    tape = ad.Tape()
    x = tape.variable(a)
    out = ad.total(x * x + x)
    (g,) = tape.gradient(out, [x])
    np.testing.assert_allclose(g, 2 * a + 1)


def test_unused_input_gets_zero_gradient():
    tape = ad.Tape()
    x, y = tape.variable(np.ones(2)), tape.variable(np.ones(3))
    grads = tape.gradient(ad.total(x), [x, y])
    np.testing.assert_array_equal(grads[1], np.zeros(3))


def test_unrecorded_tape_cannot_differentiate():
    tape = ad.Tape(record=False)
    x = tape.variable(np.ones(2))
    out = ad.total(x * 2.0)
    assert len(tape) == 0 and out.value == 4.0
    with pytest.raises(RuntimeError):
        tape.gradient(out, [x])


def test_numpy_operands_do_not_hijack_vars():
    tape = ad.Tape()
    x = tape.variable(np.ones(2))
    assert isinstance(np.ones(2) * x, ad.Var)
    assert isinstance(np.ones(2) - x, ad.Var)


def test_branch_log_replays_recorded_kinks():
    log = ad.BranchLog()
    tape = ad.Tape(branches=log)
    ad.relu(tape.variable(np.array([-1.0, 2.0])))
    ad.absolute(tape.variable(np.array([-3.0, 4.0])))
    assert [m.tolist() for m in log.masks] == [[False, True], [-1.0, 1.0]]
    replay = ad.Tape(record=False, branches=ad.BranchLog(log.masks))
    # values on the other side of the kink follow the recorded piece
    assert ad.relu(replay.variable(np.array([1.0, 2.0]))).value.tolist() == [0.0, 2.0]
    assert ad.absolute(replay.variable(np.array([3.0, 4.0]))).value.tolist() == [-3.0, 4.0]


def test_backward_closures_hold_no_reference_cycles(rng):
    gc.collect()
    gc.disable()
    try:
        tape = ad.Tape()
        x = tape.variable(rng.standard_normal((2, 1, 6, 6)))
        w = tape.variable(rng.standard_normal((3, 2, 3, 3)))
        out = ad.total(ad.relu(ad.conv2d(x, w, tape.variable(np.zeros(3)))))
        tape.gradient(out, [w])
        del tape, x, w, out
        assert gc.collect() == 0
    finally:
        gc.enable()
