import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfsd.optim import NonFiniteGradientError, OptState, cosine_lr, step


def scalar_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain adaptive-moment rule, one coordinate at a time."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_cosine_endpoints():
    assert cosine_lr(0, 100, 1e-5, 1e-6) == 1e-5
    assert abs(cosine_lr(100, 100, 1e-5, 1e-6) - 1e-6) < 1e-21
    assert abs(cosine_lr(50, 100, 1e-5, 1e-6) - 5.5e-6) < 1e-20


@pytest.mark.parametrize("t,total", [(-1, 10), (11, 10), (0, 0)])
def test_cosine_rejects_bad_steps(t, total):
    with pytest.raises(ValueError):
        cosine_lr(t, total, 1e-5, 1e-6)


@settings(max_examples=50, deadline=None)
@given(total=st.integers(1, 500), data=st.data())
def test_cosine_monotone_and_bounded(total, data):
    t = data.draw(st.integers(0, total - 1))
    a, b = cosine_lr(t, total, 1e-3, 1e-4), cosine_lr(t + 1, total, 1e-3, 1e-4)
    assert 1e-4 - 1e-18 <= b <= a <= 1e-3


def _state(params, **kw):
    kw.setdefault("total_steps", 10**9)
    return OptState.for_params(params, **kw)


def test_zero_grad_zero_decay_is_noop():
    p = [np.array([1.0, -2.0]), np.array([[3.0]])]
    new, st_ = step(p, [np.zeros(2), np.zeros((1, 1))], _state(p, lr_max=0.1, lr_min=0.1, weight_decay=0.0))
    assert all(np.array_equal(a, b) for a, b in zip(new, p))
    assert st_.t == 1


def test_single_scalar_step():
    p = [np.array([1.0])]
    new, _ = step(p, [np.array([1.0])], _state(p, lr_max=0.1, lr_min=0.1, weight_decay=0.0))
    # m_hat = v_hat = 1, so the step is 0.1 / (1 + 1e-8)
    assert abs(new[0][0] - (1.0 - 0.1 / (1.0 + 1e-8))) < 1e-12
    assert abs(new[0][0] - 0.900000001) < 1e-12


def test_pure_decoupled_decay():
    p = [np.array([1.0])]
    new, st_ = step(p, [np.array([0.0])], _state(p, lr_max=0.1, lr_min=0.1, weight_decay=0.01))
    assert abs(new[0][0] - 0.999) < 1e-15
    # decay never enters the moments
    assert st_.m[0][0] == 0.0 and st_.v[0][0] == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8))
def test_matches_scalar_reference_without_decay(seed, n):
    r = np.random.default_rng(seed)
    p0 = r.normal(size=3)
    gs = r.normal(size=(n, 3))
    params = [p0.copy()]
    state = _state(params, lr_max=0.01, lr_min=0.01, weight_decay=0.0)
    for g in gs:
        params, state = step(params, [g], state)
    for k in range(3):
        assert abs(params[0][k] - scalar_adam(p0[k], gs[:, k], 0.01)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_first_steps_update_bound(seed):
    r = np.random.default_rng(seed)
    lr, wd = 1e-3, 0.01
    params = [r.normal(size=5)]
    state = _state(params, lr_max=lr, lr_min=lr, weight_decay=wd)
    for _ in range(5):
        before = params[0]
        params, state = step(params, [r.normal(scale=10.0, size=5)], state)
        delta = np.abs(params[0] - before)
        assert np.all(delta <= lr * (1 / (1 - 0.9) + wd * np.abs(before)) + 1e-15)
        assert np.all(state.v[0] >= 0)


def test_nonfinite_gradient_rejected():
    p = [np.array([1.0, 2.0])]
    state = _state(p)
    with pytest.raises(NonFiniteGradientError):
        step(p, [np.array([np.nan, 0.0])], state)
    assert state.t == 0


def test_step_is_deterministic_and_pure(rng):
    p = [rng.normal(size=(3, 2))]
    g = [rng.normal(size=(3, 2))]
    state = _state(p)
    snapshot = p[0].copy()
    a, sa = step(p, g, state)
    b, sb = step(p, g, state)
    assert a[0].tobytes() == b[0].tobytes()
    assert sa.m[0].tobytes() == sb.m[0].tobytes()
    assert np.array_equal(p[0], snapshot) and state.t == 0


def test_schedule_follows_steps():
    p = [np.zeros(1)]
    state = _state(p, lr_max=1e-5, lr_min=1e-6, total_steps=4)
    lrs = []
    for _ in range(4):
        lrs.append(state.current_lr())
        p, state = step(p, [np.ones(1)], state)
    assert lrs[0] == 1e-5
    assert abs(state.current_lr() - 1e-6) < 1e-21
    assert lrs == sorted(lrs, reverse=True)


def test_state_block_round_trip(rng):
    p = [rng.normal(size=2), rng.normal(size=(2, 2))]
    state = _state(p)
    p, state = step(p, [np.ones(2), np.ones((2, 2))], state)
    back = OptState.from_blocks(state.hyper(), state.blocks())
    assert back.t == 1 and all(np.array_equal(a, b) for a, b in zip(back.v, state.v))
