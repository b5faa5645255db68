"""Tape engine: chain rule, determinism, straight-through behavior."""

import numpy as np
import pytest

from vqad.autodiff import Tape, finite_diff, grad_check
from vqad.oracle import PRIMITIVE_TOL, _PRIMITIVES


def test_linear_chain_rule():
    # y = w * x with x=2, w=3: dL/dw = 2, dL/dx = 3
    tape = Tape()
    w = tape.param("w", np.array([3.0]))
    x = tape.param("x", np.array([2.0]))
    loss = tape.sum_all(tape.mul(w, x))
    grads = tape.backward(loss)
    assert grads["w"] == pytest.approx([2.0])
    assert grads["x"] == pytest.approx([3.0])


def test_sum_gradient_is_ones():
    tape = Tape()
    v = tape.param("v", np.arange(5.0))
    grads = tape.backward(tape.sum_all(v))
    np.testing.assert_array_equal(grads["v"], np.ones(5))


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 4))
    point = {
        "w1": rng.normal(size=(4, 8)),
        "b1": rng.normal(size=(8,)),
        "w2": rng.normal(size=(8, 1)),
        "b2": rng.normal(size=(1,)),
    }

    def build(t, p):
        h = t.relu(t.affine(t.constant(x), p["w1"], p["b1"]))
        return t.sum_all(t.affine(h, p["w2"], p["b2"]))

    assert grad_check(build, point).max_rel_err < 1e-6


def test_grad_check_square():
    # f(x) = x^2 at x=3: analytic 6, FD 6
    def build(t, p):
        return t.sum_all(t.mul(p["x"], p["x"]))

    report = grad_check(build, {"x": np.array([3.0])}, eps=1e-5)
    assert report.max_rel_err < 1e-6
    fd = finite_diff(build, {"x": np.array([3.0])}, eps=1e-5)
    assert fd["x"] == pytest.approx([6.0], abs=1e-6)


def test_grad_check_softmax_dot():
    rng = np.random.default_rng(11)
    c = rng.normal(size=(1, 8))

    def build(t, p):
        return t.sum_all(t.mul(t.softmax_rows(p["x"]), t.constant(c)))

    report = grad_check(build, {"x": rng.normal(size=(1, 8))})
    assert report.max_rel_err < 1e-6


def test_relu_gradient_zero_in_inactive_region():
    tape = Tape()
    x = tape.param("x", np.array([-1.0]))
    grads = tape.backward(tape.sum_all(tape.relu(x)))
    assert grads["x"] == pytest.approx([0.0], abs=0.0)


def test_relu_gradient_at_exact_zero_is_zero():
    tape = Tape()
    x = tape.param("x", np.array([0.0]))
    grads = tape.backward(tape.sum_all(tape.relu(x)))
    assert grads["x"][0] == 0.0


@pytest.mark.parametrize("name,make", _PRIMITIVES)
@pytest.mark.parametrize("seed", range(5))
def test_primitive_finite_differences(name, make, seed):
    build, point = make(np.random.default_rng(100 + seed))
    assert grad_check(build, point).max_rel_err < PRIMITIVE_TOL


def test_straight_through_forward_hard_backward_soft():
    rng = np.random.default_rng(0)
    hard = rng.normal(size=(3, 2))
    cot = rng.normal(size=(3, 2))

    tape = Tape()
    soft_in = tape.param("s", rng.normal(size=(3, 2)))
    soft = tape.sigmoid(soft_in)
    node = tape.straight_through(hard, soft)
    np.testing.assert_array_equal(node.value, hard)  # forward: hard, bit-exact

    loss = tape.sum_all(tape.mul(node, tape.constant(cot)))
    grads = tape.backward(loss)

    ref = Tape()
    soft_in2 = ref.param("s", soft_in.value)
    loss2 = ref.sum_all(ref.mul(ref.sigmoid(soft_in2), ref.constant(cot)))
    ref_grads = ref.backward(loss2)
    np.testing.assert_array_equal(grads["s"], ref_grads["s"])  # backward: soft


def test_backward_is_deterministic():
    rng = np.random.default_rng(5)
    tape = Tape()
    w = tape.param("w", rng.normal(size=(4, 4)))
    x = tape.constant(rng.normal(size=(2, 4)))
    h = tape.relu(tape.affine(x, w))
    loss = tape.mean_all(tape.mul(h, h))
    first = tape.backward(loss)
    second = tape.backward(loss)
    np.testing.assert_array_equal(first["w"], second["w"])


def test_non_scalar_loss_rejected():
    tape = Tape()
    x = tape.param("x", np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(x)


def test_unreached_parameter_gets_zero_gradient():
    tape = Tape()
    used = tape.param("used", np.ones(2))
    unused = tape.param("unused", np.ones(3))
    grads = tape.backward(tape.sum_all(used))
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))
    assert grads["used"].shape == (2,)


def test_duplicate_parameter_name_rejected():
    tape = Tape()
    tape.param("w", np.ones(1))
    with pytest.raises(ValueError, match="duplicate"):
        tape.param("w", np.ones(1))


def test_gather_rows_out_of_range():
    tape = Tape()
    x = tape.param("x", np.ones((3, 2)))
    with pytest.raises(IndexError):
        tape.gather_rows(x, np.array([3]))


def test_grad_check_rejects_non_finite():
    def build(t, p):
        return t.sum_all(t.exp(t.scale(p["x"], 1000.0)))

    with pytest.raises(FloatingPointError):
        grad_check(build, {"x": np.array([5.0])})
