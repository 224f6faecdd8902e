import numpy as np
import pytest

from grainforge.network import LayerParams, Parameters
from grainforge.optimizer import OptimizerState, step
from grainforge.rng import Rng


def scalar_params(value: float) -> Parameters:
    return Parameters([LayerParams(np.array([[value]]), np.zeros(1))])


def scalar_grads(value: float) -> Parameters:
    return Parameters([LayerParams(np.array([[value]]), np.zeros(1))])


def param_array(rng: Rng) -> Parameters:
    return Parameters(
        [
            LayerParams(rng.normal(0, 1, (4, 3)), rng.normal(0, 1, (3,))),
            None,
            LayerParams(rng.normal(0, 1, (2, 2)), rng.normal(0, 1, (2,))),
        ]
    )


def grads_like(params: Parameters, rng: Rng) -> Parameters:
    return Parameters(
        [
            LayerParams(rng.normal(0, 1, lp.weight.shape), rng.normal(0, 1, lp.bias.shape))
            if lp is not None
            else None
            for lp in params.layers
        ]
    )


def zero_grads_like(params: Parameters) -> Parameters:
    return Parameters(
        [
            LayerParams(np.zeros_like(lp.weight), np.zeros_like(lp.bias))
            if lp is not None
            else None
            for lp in params.layers
        ]
    )


@pytest.mark.parametrize("algorithm", ["sgd", "adam", "adamax"])
def test_zero_gradients_leave_params_unchanged(algorithm, rng):
    params = param_array(rng)
    state = OptimizerState(algorithm=algorithm, learning_rate=0.1)
    updated, _ = step(state, params, zero_grads_like(params))
    for a, b in zip(params.layers, updated.layers):
        if a is None:
            continue
        assert np.array_equal(a.weight, b.weight)
        assert np.array_equal(a.bias, b.bias)


def test_first_adam_step_magnitude_is_learning_rate():
    # at t=1 the bias corrections cancel the decay factors, so the update
    # is lr * g/(|g| + eps), i.e. lr in magnitude for any constant gradient
    for g in (0.001, 1.0, 250.0):
        lr = 0.05
        state = OptimizerState(algorithm="adam", learning_rate=lr)
        updated, _ = step(state, scalar_params(1.0), scalar_grads(g))
        delta = 1.0 - updated.layers[0].weight[0, 0]
        assert delta == pytest.approx(lr, rel=1e-4)


def test_adam_scale_invariance_at_t1(rng):
    params = param_array(rng)
    # magnitudes bounded away from 0: near-zero coordinates are dominated
    # by epsilon and the invariance bound does not apply to them
    grads = grads_like(params, rng)
    for lp in grads.layers:
        if lp is not None:
            lp.weight = np.sign(lp.weight) * np.clip(np.abs(lp.weight), 0.5, None)
            lp.bias = np.sign(lp.bias) * np.clip(np.abs(lp.bias), 0.5, None)
    s1 = OptimizerState(algorithm="adam", learning_rate=1e-2)
    u1, _ = step(s1, params, grads)
    scaled = Parameters(
        [
            LayerParams(lp.weight * 37.5, lp.bias * 37.5) if lp else None
            for lp in grads.layers
        ]
    )
    s2 = OptimizerState(algorithm="adam", learning_rate=1e-2)
    u2, _ = step(s2, params, scaled)
    for a, b in zip(u1.layers, u2.layers):
        if a is None:
            continue
        assert np.abs(a.weight - b.weight).max() < 1e-9
        assert np.abs(a.bias - b.bias).max() < 1e-9


def test_adam_converges_on_scalar_quadratic():
    # minimize f(w) = (w - 3)^2 from w = 0; the loss gradient is 2(w - 3)
    state = OptimizerState(algorithm="adam", learning_rate=0.05)
    params = scalar_params(0.0)
    for _ in range(200):
        w = params.layers[0].weight[0, 0]
        params, state = step(state, params, scalar_grads(2 * (w - 3.0)))
    assert abs(params.layers[0].weight[0, 0] - 3.0) < 1e-2


def test_sgd_is_exact(rng):
    params = param_array(rng)
    grads = grads_like(params, rng)
    lr = 0.37
    state = OptimizerState(algorithm="sgd", learning_rate=lr)
    updated, _ = step(state, params, grads)
    for lp, g, u in zip(params.layers, grads.layers, updated.layers):
        if lp is None:
            continue
        assert np.array_equal(u.weight, lp.weight - lr * g.weight)
        assert np.array_equal(u.bias, lp.bias - lr * g.bias)


def test_adamax_first_step_matches_formula():
    lr, b1, eps = 1e-3, 0.9, 1e-8
    g = 4.0
    state = OptimizerState(algorithm="adamax", learning_rate=lr)
    updated, _ = step(state, scalar_params(2.0), scalar_grads(g))
    # t=1: m = (1-b1) g, u = |g|, w -= lr/(1-b1) * m/(u + eps)
    expected = 2.0 - lr / (1 - b1) * ((1 - b1) * g) / (abs(g) + eps)
    assert updated.layers[0].weight[0, 0] == pytest.approx(expected, rel=1e-12)


def test_step_counter_increments():
    state = OptimizerState(algorithm="adam", learning_rate=1e-3)
    params = scalar_params(0.0)
    for expected in range(1, 6):
        params, state = step(state, params, scalar_grads(1.0))
        assert state.t == expected


def test_nonfinite_gradient_names_tensor():
    state = OptimizerState(algorithm="adam", learning_rate=1e-3)
    bad = Parameters([LayerParams(np.array([[np.nan]]), np.zeros(1))])
    with pytest.raises(FloatingPointError, match="layer 0 weight"):
        step(state, scalar_params(0.0), bad)


def test_unknown_algorithm_rejected():
    with pytest.raises(ValueError, match="unknown optimizer"):
        OptimizerState(algorithm="rmsprop", learning_rate=1e-3)
