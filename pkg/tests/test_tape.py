import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handsoff import tape as ad
from handsoff.dynamics import Pendulum, record_rollout
from handsoff.objective import record_total_cost
from handsoff.tape import DomainError, Tape, finite_diff_check


def test_leaf_holds_value_without_parents():
    t = Tape()
    a = t.leaf(3.0)
    b = t.leaf(0.0)
    assert a.value == 3.0 and a.parents == ()
    assert b.value == 0.0
    assert a.id < b.id
    assert t.leaf_ids == [a.id, b.id]


def test_constants_are_not_leaves():
    t = Tape()
    x = t.leaf(1.0)
    y = x * 2.0
    assert t.leaf_ids == [x.id]
    assert t.backward(y) == [2.0]


def test_sin_at_zero():
    t = Tape()
    s = ad.sin(t.leaf(0.0))
    assert s.value == 0.0
    assert s.local_grads == (1.0,)
    assert t.backward(s) == [1.0]


@pytest.mark.parametrize(
    "x, p, value, grad",
    [
        (-4.0, 1.0, 4.0, -1.0),
        # d/dx |x|^0.5 = 0.5 * x**-0.5 = 0.25 at x = 4
        (4.0, 0.5, 2.0, 0.25),
        (0.0, 1.0, 0.0, 0.0),
    ],
)
def test_smooth_abs_pow_without_smoothing(x, p, value, grad):
    t = Tape()
    n = t.apply("smooth_abs_pow", t.leaf(x), p=p, eps=0.0)
    assert n.value == pytest.approx(value, rel=1e-15)
    assert n.local_grads[0] == pytest.approx(grad, rel=1e-15)


def test_smooth_abs_pow_gradient_at_zero_with_eps():
    t = Tape()
    n = ad.smooth_abs_pow(t.leaf(0.0), 0.3, 1e-8)
    assert n.local_grads == (0.0,)
    assert n.value == pytest.approx(1e-8**0.3)


def test_domain_errors():
    t = Tape()
    with pytest.raises(DomainError):
        t.leaf(1.0) / t.leaf(0.0)
    with pytest.raises(DomainError):
        ad.smooth_abs_pow(t.leaf(0.0), 0.5, 0.0)
    with pytest.raises(DomainError):
        ad.smooth_abs_pow(t.leaf(1.0), 1.5, 0.0)
    with pytest.raises(TypeError):
        t.apply("add", t.leaf(1.0))
    with pytest.raises(ValueError):
        t.apply("exp", t.leaf(1.0))


def test_backward_product_rule():
    t = Tape()
    x, y = t.leaf(2.0), t.leaf(3.0)
    assert t.backward(x * y) == [3.0, 2.0]


def test_backward_rejects_foreign_node():
    t1, t2 = Tape(), Tape()
    n = t2.leaf(1.0)
    with pytest.raises(ValueError):
        t1.backward(n)
    with pytest.raises(ValueError):
        t1.leaf(1.0) + n


def test_backward_leaves_tape_unchanged():
    t = Tape()
    x = t.leaf(0.7)
    out = ad.sin(x) * x
    before = (list(t.values), list(t.parents), list(t.local_grads))
    t.backward(out)
    assert (t.values, t.parents, t.local_grads) == before


def test_parents_precede_children():
    t = Tape()
    x, y = t.leaf(0.3), t.leaf(-1.2)
    z = ad.cos(x * y) / (y - 2.0) + ad.square(x)
    t.backward(z)
    for k, parents in enumerate(t.parents):
        assert all(p < k for p in parents)


def test_fd_check_sum_of_squares():
    f = lambda v: v[0] * v[0] + v[1] * v[1]
    assert finite_diff_check(f, [1.0, 2.0], 1e-5) <= 1e-8


def test_fd_check_constant_function():
    assert finite_diff_check(lambda v: 5.0, [0.3, -2.0], 1e-5) == 0.0


def test_fd_check_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda v: v[0], [1.0], 0.0)


def _pendulum_loss(T, w, lam=1.0, p=0.5, eps=1e-8):
    model = Pendulum()

    def f(u):
        steps = [[ui] for ui in u]
        return record_total_cost(model, [0.0, 0.0], steps, [w], [math.pi, 0.0], lam, p, eps)[0]

    return f


def test_fd_check_pendulum_terminal_cost_T5():
    rng = np.random.default_rng(3)
    w = rng.uniform(-1, 1, (5, 1))
    u = rng.uniform(-2, 2, 5)
    f = _pendulum_loss(5, w, lam=0.0)
    assert finite_diff_check(f, u, 1e-5) <= 1e-6


def test_fd_check_full_pendulum_loss_T10():
    rng = np.random.default_rng(4)
    w = rng.uniform(-1, 1, (10, 1))
    u = rng.uniform(-2, 2, 10)
    assert finite_diff_check(_pendulum_loss(10, w), u, 1e-5) <= 1e-5


UNARY = {
    "sin": (ad.sin, math.sin),
    "cos": (ad.cos, math.cos),
    "square": (ad.square, lambda x: x * x),
    "abs_pow": (lambda x: ad.smooth_abs_pow(x, 0.6, 0.5), lambda x: (x * x + 0.25) ** 0.3),
}


def _fd(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


@settings(max_examples=150, deadline=None)
@given(
    op=st.sampled_from(sorted(UNARY) + ["add", "sub", "mul", "div"]),
    a=st.floats(-3, 3),
    b=st.floats(0.2, 3),
)
def test_ops_match_central_differences(op, a, b):
    t = Tape()
    x, y = t.leaf(a), t.leaf(b)
    if op in UNARY:
        node_fn, float_fn = UNARY[op]
        grads = t.backward(node_fn(x))
        numeric = [_fd(float_fn, a), 0.0]
    else:
        fn = {"add": lambda u, v: u + v, "sub": lambda u, v: u - v,
              "mul": lambda u, v: u * v, "div": lambda u, v: u / v}[op]
        grads = t.backward(fn(x, y))
        numeric = [_fd(lambda s: fn(s, b), a), _fd(lambda s: fn(a, s), b)]
    for g, n in zip(grads, numeric):
        if abs(g) < 1e-6:
            assert abs(g - n) <= 1e-8
        else:
            assert abs(g - n) / abs(g) <= 1e-5


@settings(max_examples=50, deadline=None)
@given(
    u=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
)
def test_gradient_is_linear(u, a, b):
    def f(v):
        return ad.sin(v[0]) * v[1] + ad.square(v[2])

    def g(v):
        return ad.cos(v[1] * v[2]) - v[0]

    t = Tape()
    leaves = t.leaves(u)
    combined = t.backward(a * f(leaves) + b * g(leaves))
    t2 = Tape()
    gf = t2.backward(f(t2.leaves(u)))
    t3 = Tape()
    gg = t3.backward(g(t3.leaves(u)))
    np.testing.assert_allclose(combined, a * np.array(gf) + b * np.array(gg), rtol=0, atol=1e-12)


def _record(u, w):
    t = Tape()
    steps = [[n] for n in t.leaves(u)]
    out = record_total_cost(Pendulum(), [0.0, 0.0], steps, [w], [math.pi, 0.0], 1.0, 0.5, 1e-8)[0]
    return t, t.backward(out)


def test_replay_is_bit_identical():
    rng = np.random.default_rng(0)
    u, w = rng.normal(size=8), rng.uniform(-1, 1, (8, 1))
    t1, g1 = _record(u, w)
    t2, g2 = _record(u, w)
    assert t1.values == t2.values and t1.parents == t2.parents and t1.local_grads == t2.local_grads
    assert g1 == g2


@pytest.mark.parametrize("T", [1, 2, 3, 10, 50])
def test_rollout_node_count_is_linear(T):
    # leaves: T; step 1 (float state): +u, +w;
    # step 2 (angle still a float): angle 2, rate 6; later steps: 2 + 8
    expected = {1: 1 + 2}.get(T, T + 2 + 8 + 10 * (T - 2))
    t = Tape()
    steps = [[n] for n in t.leaves([0.5] * T)]
    record_rollout(Pendulum(), [0.0, 0.0], steps, np.zeros((T, 1)))
    assert len(t) == expected
