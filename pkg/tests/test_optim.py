import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handsoff.optim import AdamState, LrSchedule, NonFiniteGradient, adam_step, lr_decay


def reference_adam(theta0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain scalar Adam loop, kept separate from the library code."""
    theta, m, v = theta0, 0.0, 0.0
    out = []
    for k in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**k)
        vhat = v / (1 - b2**k)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(theta)
    return out


def test_zero_gradient_is_identity():
    state = AdamState.zeros(3, lr=0.5)
    params = np.array([1.0, -2.0, 3.0])
    new, state2 = adam_step(state, params, np.zeros(3))
    assert np.array_equal(new, params)
    assert state2.t == 1


def test_first_step_moves_by_lr():
    state = AdamState.zeros(1, lr=0.1)
    new, _ = adam_step(state, np.array([1.0]), np.array([2.0]))
    assert new[0] == pytest.approx(0.9, abs=1e-8)


def test_matches_reference_loop_on_quadratic():
    grad = lambda th: 2.0 * (th - 3.0)
    expected = reference_adam(0.0, grad, 100, 0.1)
    state, theta = AdamState.zeros(1, lr=0.1), np.array([0.0])
    for k in range(100):
        theta, state = adam_step(state, theta, np.array([grad(theta[0])]))
        assert abs(theta[0] - expected[k]) <= 1e-12


def test_converges_on_convex_quadratic():
    state, theta = AdamState.zeros(1, lr=0.01), np.array([-1.5])
    for _ in range(2000):
        theta, state = adam_step(state, theta, 4.0 * (theta - 0.7))
    assert abs(theta[0] - 0.7) <= 1e-3


def worst_case_ratio(t, b1=0.9, b2=0.999):
    """sup |m_hat| / sqrt(v_hat) over gradient histories of length t (Cauchy-Schwarz, tight)."""
    w = [(1 - b1) * b1 ** (t - k) / (1 - b1**t) for k in range(1, t + 1)]
    u = [(1 - b2) * b2 ** (t - k) / (1 - b2**t) for k in range(1, t + 1)]
    return math.sqrt(sum(a * a / c for a, c in zip(w, u)))


def test_worst_case_ratio_is_near_one_for_short_runs():
    assert worst_case_ratio(1) == pytest.approx(1.0)
    assert worst_case_ratio(20) < 1.16


@settings(max_examples=100, deadline=None)
@given(
    grads=st.lists(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), min_size=1, max_size=20),
    lr=st.floats(1e-4, 1.0),
)
def test_update_magnitude_bounded_by_lr(grads, lr):
    state, params = AdamState.zeros(4, lr=lr), np.zeros(4)
    for t, g in enumerate(grads, start=1):
        new, state = adam_step(state, params, np.array(g))
        assert np.all(np.abs(new - params) <= lr * worst_case_ratio(t) * (1 + 1e-9))
        params = new


def test_inputs_are_not_mutated_and_result_is_deterministic():
    state = AdamState.zeros(2, lr=0.3)
    params, g = np.array([1.0, 2.0]), np.array([0.5, -0.25])
    a = adam_step(state, params, g)
    b = adam_step(state, params, g)
    assert a[0].tobytes() == b[0].tobytes()
    assert state.t == 0 and np.all(state.m == 0)
    assert params.tolist() == [1.0, 2.0]


def test_non_finite_gradient_names_index():
    with pytest.raises(NonFiniteGradient) as err:
        adam_step(AdamState.zeros(3), np.zeros(3), np.array([0.0, 1.0, np.nan]))
    assert err.value.index == 2


def test_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(3))


def test_state_round_trips_through_json():
    state = AdamState.zeros(2, lr=0.25)
    _, state = adam_step(state, np.zeros(2), np.array([0.1, -3.0]))
    back = AdamState.from_dict(json.loads(json.dumps(state.to_dict())))
    assert back.t == state.t and back.lr == state.lr
    assert np.array_equal(back.m, state.m) and np.array_equal(back.v, state.v)


def test_lr_schedule_endpoint():
    s = LrSchedule(1.0, 0.5, 9)
    assert lr_decay(s) == 0.5**10 == 9.765625e-4
    assert LrSchedule(1.0, 0.5, 10).lr == 0.5**10


def test_lr_schedule_start_and_ratios():
    s = LrSchedule(1.0, 0.5)
    assert s.lr == 1.0
    rates = [s.lr]
    for _ in range(10):
        s = s.advance()
        rates.append(s.lr)
    assert all(b / a == 0.5 for a, b in zip(rates, rates[1:]))


@pytest.mark.parametrize("kw", [{"lr0": 0.0}, {"beta": 1.0}, {"beta": 0.0}])
def test_lr_schedule_validation(kw):
    with pytest.raises(ValueError):
        LrSchedule(**kw)
