import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dvs2s import numeric
from dvs2s.numeric import OptimizerState, adadelta_step, gradient_check, init_params, masked_softmax

finite = st.floats(-50, 50, allow_nan=False)


def test_masked_softmax_hand_values():
    np.testing.assert_allclose(masked_softmax([math.log(2), 0.0], [1, 1]), [2 / 3, 1 / 3], atol=1e-15)
    np.testing.assert_allclose(masked_softmax(np.zeros(4), np.ones(4)), 0.25)
    out = masked_softmax([3.0, -1.0, 7.0], [0, 1, 0])
    assert out.tolist() == [0.0, 1.0, 0.0]


def test_masked_softmax_empty_mask():
    with pytest.raises(ValueError):
        masked_softmax([1.0, 2.0], [0, 0])


@given(arrays(float, st.integers(1, 12), elements=finite), st.data())
def test_masked_softmax_properties(scores, data):
    mask = data.draw(arrays(bool, scores.shape))
    if not mask.any():
        mask[0] = True
    p = masked_softmax(scores, mask)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p[~mask] == 0.0)
    shift = data.draw(finite)
    assert np.max(np.abs(masked_softmax(scores + shift, mask) - p)) < 1e-12


def test_masked_log_softmax_matches_softmax():
    s, m = np.array([0.3, -2.0, 1.5, 0.0]), np.array([1, 0, 1, 1], bool)
    lp = numeric.masked_log_softmax(s, m)
    assert lp[1] == -np.inf
    np.testing.assert_allclose(np.exp(lp[m]), masked_softmax(s, m)[m], rtol=1e-14)


def test_sigmoid_is_stable_at_extremes():
    out = numeric.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert out.tolist() == [0.0, 0.5, 1.0]


def test_adadelta_first_step_value():
    params = {"x": np.array([0.0])}
    state = OptimizerState.zeros_like(params, 0.95, 1e-6)
    new, st_ = adadelta_step(params, {"x": np.array([1.0])}, state)
    expected = -math.sqrt(1e-6) / math.sqrt(0.05 + 1e-6)
    assert new["x"][0] == pytest.approx(expected, rel=1e-12)
    assert new["x"][0] == pytest.approx(-4.4721e-3, abs=1e-7)
    assert st_.sq_grad["x"][0] == pytest.approx(0.05)
    assert st_.sq_delta["x"][0] == pytest.approx(0.05 * expected**2)


def test_adadelta_zero_gradient_decays_accumulators():
    params = {"w": np.array([1.0, -2.0])}
    state = OptimizerState({"w": np.array([1.0, 2.0])}, {"w": np.array([3.0, 4.0])})
    new, st_ = adadelta_step(params, {"w": np.zeros(2)}, state)
    assert np.array_equal(new["w"], params["w"])
    np.testing.assert_allclose(st_.sq_grad["w"], [0.95, 1.9])
    np.testing.assert_allclose(st_.sq_delta["w"], [2.85, 3.8])


def test_adadelta_lr_zero_still_updates_accumulators():
    params = {"w": np.array([0.5])}
    state = OptimizerState.zeros_like(params)
    new, st_ = adadelta_step(params, {"w": np.array([2.0])}, state, lr_scale=0.0)
    assert new["w"][0] == 0.5
    assert st_.sq_grad["w"][0] > 0 and st_.sq_delta["w"][0] > 0


def test_adadelta_is_deterministic_and_pure():
    params = {"w": np.array([0.1, 0.2])}
    grads = {"w": np.array([0.3, -0.4])}
    state = OptimizerState.zeros_like(params)
    a = adadelta_step(params, grads, state)
    b = adadelta_step(params, grads, state)
    assert np.array_equal(a[0]["w"], b[0]["w"])
    assert np.all(state.sq_grad["w"] == 0)


def test_adadelta_shape_mismatch():
    params = {"w": np.zeros(2)}
    with pytest.raises(ValueError):
        adadelta_step(params, {"w": np.zeros(3)}, OptimizerState.zeros_like(params))


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = numeric.clip_by_global_norm(g, 1.0)
    assert norm == 5.0
    assert numeric.global_norm(clipped) == pytest.approx(1.0)
    same, _ = numeric.clip_by_global_norm(g, 10.0)
    assert same is g


def test_gradient_check_quadratic_and_constant():
    params = {"t": np.array([0.3, -1.2, 2.0])}
    quad = lambda p: (0.5 * float(p["t"] @ p["t"]), {"t": p["t"].copy()})  # noqa: E731
    assert gradient_check(quad, params, eps=1e-5) < 1e-9
    const = lambda p: (4.0, {"t": np.zeros(3)})  # noqa: E731
    assert gradient_check(const, params) == 0.0


def test_gradient_check_rejects_bad_eps_and_nonfinite():
    params = {"t": np.zeros(1)}
    with pytest.raises(ValueError):
        gradient_check(lambda p: (0.0, {"t": np.zeros(1)}), params, eps=1e-2)
    with pytest.raises(FloatingPointError):
        gradient_check(lambda p: (float("nan"), {"t": np.zeros(1)}), params)


def test_init_params():
    shapes = {"W": (3, 5), "b": (3,)}
    a = init_params(shapes, 7, biases=("b",))
    b = init_params(shapes, 7, biases=("b",))
    assert np.array_equal(a["W"], b["W"])
    assert np.all(a["b"] == 0)
    bound = math.sqrt(6 / (5 + 3))
    assert np.all(np.abs(a["W"]) < bound)
    z = init_params(shapes, 7, scheme="zeros")
    assert all(np.all(v == 0) for v in z.values())
    with pytest.raises(ValueError):
        init_params(shapes, 0, scheme="normal")


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_init_params_within_bound(seed):
    p = init_params({"W": (4, 9)}, seed)
    assert np.all(np.abs(p["W"]) < numeric.glorot_bound((4, 9)))
