import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from certainty_ssl.nn import (
    MLP, SGD, Perturbation, ShapeError, backward, cross_entropy, forward, init_mlp,
    mse_rows, replay, softmax, temperature_softmax,
)
from certainty_ssl.oracles import numerical_gradient, relative_error


def identity_model(d=2):
    return MLP([np.eye(d)], [np.zeros(d)], [0.0])


def random_model(rng, sizes=(3, 5, 4, 3), dropout=0.3):
    model = init_mlp(sizes, dropout, rng)
    for b in model.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    return model


# forward

def test_identity_forward():
    logits, _ = forward(identity_model(), np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(logits, [[1.0, 2.0]])


def test_degenerate_dropout_rejected():
    with pytest.raises(ValueError, match="degenerate dropout rate"):
        MLP([np.eye(2)], [np.zeros(2)], [1.0])


def test_dimension_mismatch_names_layer():
    model = init_mlp((2, 4, 3), 0.0, np.random.default_rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        forward(model, np.zeros((5, 3)))
    with pytest.raises(ShapeError, match="layer 1"):
        MLP([np.zeros((2, 4)), np.zeros((5, 3))], [np.zeros(4), np.zeros(3)], [0.0, 0.0])


def test_same_stream_state_gives_identical_logits():
    model = random_model(np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(6, 3))
    a, _ = forward(model, x, Perturbation(0.1, True, np.random.default_rng(7)))
    b, _ = forward(model, x, Perturbation(0.1, True, np.random.default_rng(7)))
    np.testing.assert_array_equal(a, b)


def test_deterministic_without_perturbation():
    model = random_model(np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(6, 3))
    a, _ = forward(model, x)
    b, _ = forward(model, x, Perturbation(0.0, False, np.random.default_rng(1)))
    np.testing.assert_array_equal(a, b)


def test_cache_replay_reproduces_logits():
    model = random_model(np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(8, 3))
    logits, cache = forward(model, x, Perturbation(0.2, True, np.random.default_rng(5)))
    np.testing.assert_array_equal(replay(model, cache), logits)
    assert sum(m is not None for m in cache.masks) == 2


# backward

def test_zero_grad_logits_give_zero_gradients():
    model = random_model(np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3))
    logits, cache = forward(model, x, Perturbation(0.0, True, np.random.default_rng(2)))
    for g in backward(model, cache, np.zeros_like(logits)):
        assert not np.any(g)


def test_single_linear_layer_closed_form():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 2))
    model = MLP([w], [np.zeros(2)], [0.0])
    x = rng.normal(size=(1, 3))
    g = rng.normal(size=(1, 2))
    _, cache = forward(model, x)
    grad_w, grad_b = backward(model, cache, g)
    np.testing.assert_allclose(grad_w, x.T @ g, rtol=0, atol=1e-15)
    np.testing.assert_allclose(grad_b, g[0], rtol=0, atol=1e-15)


def test_backward_shape_errors():
    model = random_model(np.random.default_rng(0))
    logits, cache = forward(model, np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        backward(model, cache, np.zeros((3, 3)))
    other = init_mlp((3, 4), 0.0, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        backward(other, cache, logits)


@pytest.mark.parametrize("seed", range(100))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    x = rng.normal(size=(5, 3))
    y = rng.integers(0, 3, size=5)
    _, cache = forward(model, x, Perturbation(0.1, True, rng))

    def loss():
        return float(cross_entropy(softmax(replay(model, cache)), y)[0].sum())

    _, g = cross_entropy(softmax(replay(model, cache)), y)
    analytic = backward(model, cache, g)
    numeric = numerical_gradient(loss, model.params(), eps=1e-5)
    assert relative_error(analytic, numeric) < 1e-4


def test_dropped_units_get_no_gradient():
    rng = np.random.default_rng(11)
    model = random_model(rng, sizes=(3, 6, 2), dropout=0.5)
    x = rng.normal(size=(1, 3))
    logits, cache = forward(model, x, Perturbation(0.0, True, rng))
    grads = backward(model, cache, np.ones_like(logits))
    dropped = cache.masks[1][0] == 0
    assert dropped.any()
    assert not np.any(grads[2][dropped])


# softmax variants

def test_uniform_logits_give_uniform_probs():
    for t in (0.1, 1.0, 7.0):
        np.testing.assert_allclose(temperature_softmax(np.zeros((1, 3)), t), [[1 / 3] * 3], rtol=0, atol=1e-15)


def test_unit_temperature_is_bitwise_softmax():
    z = np.random.default_rng(0).normal(size=(10, 4)) * 5
    assert np.array_equal(temperature_softmax(z, 1.0), softmax(z))
    assert np.array_equal(temperature_softmax(z, np.ones(10)), softmax(z))


def test_temperature_two_hand_value():
    e = math.e
    np.testing.assert_allclose(temperature_softmax(np.array([[2.0, 0.0]]), 2.0),
                               [[e / (e + 1), 1 / (e + 1)]], rtol=1e-12)


def test_non_positive_temperature_rejected():
    with pytest.raises(ValueError, match="non-positive temperature"):
        temperature_softmax(np.zeros((2, 2)), np.array([1.0, 0.0]))


def test_large_logits_are_stable():
    p = temperature_softmax(np.array([[1000.0, 0.0, -1000.0]]), 0.1)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, [[1.0, 0.0, 0.0]])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(0.1, 100))
def test_softmax_rows_sum_to_one(z, t):
    p = temperature_softmax(z, t)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (1, 4), elements=st.floats(-20, 20)),
       st.floats(0.1, 50), st.floats(1.0, 10.0))
def test_max_probability_non_increasing_in_temperature(z, t, factor):
    p_lo = temperature_softmax(z, t).max()
    p_hi = temperature_softmax(z, t * factor).max()
    assert p_hi <= p_lo + 1e-12


@pytest.mark.parametrize("t", [10.0, 100.0, 1000.0])
def test_high_temperature_approaches_uniform(t):
    z = np.array([[3.0, -1.0, 0.5, 2.0]])
    dev = np.abs(temperature_softmax(z, t) - 0.25).max()
    # |p - 1/C| <= spread(z) / T for large T
    assert dev <= (z.max() - z.min()) / t


# losses

def test_cross_entropy_onehot_and_uniform():
    loss, _ = cross_entropy(np.array([[0.0, 1.0, 0.0]]), np.array([1]))
    assert loss[0] == 0.0
    loss, _ = cross_entropy(np.full((1, 5), 0.2), np.array([3]))
    assert loss[0] == pytest.approx(math.log(5), abs=1e-12)


def test_cross_entropy_hand_values():
    p = softmax(np.array([[1.0, 0.0]]))
    loss, grad = cross_entropy(p, np.array([1]))
    assert loss[0] == pytest.approx(1.3132616875182228, abs=1e-12)
    np.testing.assert_allclose(grad, [[0.7310585786300049, -0.7310585786300049]], atol=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError, match="label out of range"):
        cross_entropy(np.full((1, 2), 0.5), np.array([2]))


def test_cross_entropy_gradient_vs_finite_differences():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(4, 3))
    y = np.array([0, 2, 1, 1])
    _, g = cross_entropy(softmax(z), y)
    numeric = numerical_gradient(lambda: float(cross_entropy(softmax(z), y)[0].sum()), [z])
    assert relative_error(g, numeric[0]) < 1e-6


def test_mse_rows_hand_values():
    loss, grad = mse_rows(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert loss[0] == 2.0
    np.testing.assert_array_equal(grad, [[2.0, -2.0]])
    loss, grad = mse_rows(np.ones((2, 3)), np.ones((2, 3)))
    assert not loss.any() and not grad.any()
    with pytest.raises(ShapeError):
        mse_rows(np.ones((2, 3)), np.ones((3, 2)))


@pytest.mark.parametrize("seed", range(10))
def test_mse_gradient_vs_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p, q = rng.random((3, 4)), rng.random((3, 4))
    _, grad = mse_rows(p, q)
    numeric = numerical_gradient(lambda: float(mse_rows(p, q)[0].sum()), [p])
    assert relative_error(grad, numeric[0]) < 1e-6


# optimizer

def test_zero_lr_leaves_model_unchanged():
    model = random_model(np.random.default_rng(0))
    before = [p.copy() for p in model.params()]
    SGD(lr=0.0, momentum=0.9).step(model, [np.ones_like(p) for p in model.params()])
    for a, b in zip(before, model.params()):
        np.testing.assert_array_equal(a, b)


def test_plain_sgd_step():
    model = MLP([np.ones((1, 1))], [np.zeros(1)], [0.0])
    SGD(lr=0.1, momentum=0.0).step(model, [np.array([[0.5]]), np.zeros(1)])
    assert model.weights[0][0, 0] == pytest.approx(0.95, abs=1e-15)


def test_momentum_two_step_recursion():
    model = MLP([np.ones((1, 1))], [np.zeros(1)], [0.0])
    opt = SGD(lr=0.1, momentum=0.9)
    g1, g2 = 0.5, -0.2
    opt.step(model, [np.array([[g1]]), np.zeros(1)])
    opt.step(model, [np.array([[g2]]), np.zeros(1)])
    v1 = g1
    v2 = 0.9 * v1 + g2
    expected = 1.0 - 0.1 * v1 - 0.1 * v2
    assert model.weights[0][0, 0] == pytest.approx(expected, abs=1e-15)


def test_sgd_shape_mismatch():
    model = MLP([np.ones((1, 1))], [np.zeros(1)], [0.0])
    with pytest.raises(ShapeError):
        SGD().step(model, [np.zeros((2, 1)), np.zeros(1)])
