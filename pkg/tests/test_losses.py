import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfsd import losses
from cfsd import numcore as nc
from cfsd.numcore import Tensor


def supcon_oracle(Z, y, beta, norm="paper"):
    """Direct scalar double sum, no vectorization and no max-subtraction."""
    n = len(Z)
    U = [np.array(z) / math.sqrt(sum(v * v for v in z)) for z in Z]
    dot = [[float(sum(a * b for a, b in zip(U[i], U[j]))) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        positives = [j for j in range(n) if j != i and y[j] == y[i]]
        if not positives:
            continue
        denom = sum(math.exp(dot[i][l] / beta) for l in range(n) if l != i)
        w = 1.0 / (n - 1) if norm == "paper" else 1.0 / len(positives)
        for j in positives:
            total += -w * math.log(math.exp(dot[i][j] / beta) / denom)
    return total


# --- cross-entropy -----------------------------------------------------------------


def test_ce_half():
    loss, _ = losses.ce_loss(np.array([0.5]), np.array([1.0]))
    assert abs(loss - 0.6931471805599453) < 1e-15


def test_ce_perfect_prediction():
    loss, _ = losses.ce_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert loss <= 1e-11


def test_ce_hand_value():
    loss, _ = losses.ce_loss(np.array([0.9, 0.2]), np.array([1.0, 0.0]))
    assert abs(loss - (-math.log(0.9) - math.log(0.8)) / 2) < 1e-15
    assert abs(loss - 0.164252033486018) < 1e-12


def test_ce_empty():
    with pytest.raises(ValueError):
        losses.ce_loss(np.zeros(0), np.zeros(0))


def test_ce_gradient(rng):
    s0 = rng.uniform(0.05, 0.95, size=7)
    y = rng.integers(0, 2, size=7).astype(float)

    def f(ts):
        return losses.ce_node(ts[0], y)

    assert nc.grad_check(f, [s0]) < 1e-4


# --- supervised contrastive -----------------------------------------------------------


def test_supcon_identical_pair_is_zero():
    loss, g = losses.supcon_loss(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1, 1]))
    assert loss == 0.0 and not np.signbit(loss)


def test_supcon_opposite_pair_is_zero():
    loss, g = losses.supcon_loss(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))
    assert loss == 0.0 and not g.any()


def test_supcon_single_sample_raises():
    with pytest.raises(losses.DegenerateBatchError):
        losses.supcon_loss(np.ones((1, 3)), np.array([0]))


def test_supcon_bad_beta():
    with pytest.raises(ValueError):
        losses.supcon_loss(np.eye(3), np.array([0, 0, 1]), beta=0.0)


def test_supcon_zero_embedding_raises():
    with pytest.raises(nc.DegenerateInputError):
        losses.supcon_loss(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0, 0]))


@pytest.mark.parametrize("norm", ["paper", "positives"])
def test_supcon_matches_double_sum(norm):
    Z = np.array([[0.3, -1.2, 0.5], [1.1, 0.4, -0.2], [-0.7, 0.9, 0.8], [0.2, 0.2, -1.5]])
    y = np.array([0, 1, 0, 1])
    loss, _ = losses.supcon_loss(Z, y, beta=0.1, norm=norm)
    assert abs(loss - supcon_oracle(Z, y, 0.1, norm)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 9), norm=st.sampled_from(["paper", "positives"]))
def test_supcon_random_oracle(seed, n, norm):
    r = np.random.default_rng(seed)
    Z = r.normal(size=(n, 4))
    y = r.integers(0, 2, size=n)
    loss, _ = losses.supcon_loss(Z, y, beta=0.5, norm=norm)
    assert loss >= 0.0
    assert abs(loss - supcon_oracle(Z, y, 0.5, norm)) < 1e-9 * max(1.0, loss)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.sampled_from([0.5, 2.0, 10.0]))
def test_supcon_scale_invariant(seed, c):
    r = np.random.default_rng(seed)
    # powers of two keep the rescale exact; 10 is checked to rounding level
    Z = r.normal(size=(6, 5))
    y = r.integers(0, 2, size=6)
    a, _ = losses.supcon_loss(Z, y)
    b, _ = losses.supcon_loss(c * Z, y)
    if c in (0.5, 2.0):
        assert a == b
    else:
        assert abs(a - b) < 1e-12 * max(1.0, a)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_supcon_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    Z = r.normal(size=(7, 3))
    y = r.integers(0, 3, size=7)
    perm = r.permutation(7)
    a, ga = losses.supcon_loss(Z, y)
    b, gb = losses.supcon_loss(Z[perm], y[perm])
    assert abs(a - b) < 1e-12 * max(1.0, a)
    assert np.allclose(ga[perm], gb, atol=1e-12)


def _pair_bump(gram, i, j, eps):
    g = gram.copy()
    g[i, j] += eps
    g[j, i] += eps
    return g


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_supcon_decreases_with_single_positive_pair(seed):
    # anchors 0 and 1 are each other's only positive
    r = np.random.default_rng(seed)
    U, _ = nc.l2_normalize_np(r.normal(size=(5, 4)))
    gram = U @ U.T
    y = np.array([0, 0, 1, 1, 1])
    base, _ = losses.supcon_from_gram(gram, y)
    bumped, _ = losses.supcon_from_gram(_pair_bump(gram, 0, 1, 1e-3), y)
    assert bumped < base


def test_supcon_pair_bump_can_increase_loss():
    # with two positives, pulling the already-dominant pair closer starves the third
    gram = np.array([
        [1.0, 0.9, -0.5, -0.9],
        [0.9, 1.0, -0.5, -0.9],
        [-0.5, -0.5, 1.0, -0.9],
        [-0.9, -0.9, -0.9, 1.0],
    ])
    y = np.array([0, 0, 0, 1])
    base, _ = losses.supcon_from_gram(gram, y)
    bumped, _ = losses.supcon_from_gram(_pair_bump(gram, 0, 1, 1e-3), y)
    assert bumped > base


@pytest.mark.parametrize("norm", ["paper", "positives"])
def test_supcon_gradient_check(rng, norm):
    Z = rng.normal(size=(6, 4))
    y = np.array([0, 1, 0, 1, 1, 0])

    def f(ts):
        return losses.supcon_node(ts[0], y, 0.1, norm)

    assert nc.grad_check(f, [Z]) < 1e-4


def test_gram_gradient_matches_finite_differences(rng):
    U, _ = nc.l2_normalize_np(rng.normal(size=(5, 3)))
    gram = U @ U.T
    y = np.array([0, 0, 1, 1, 0])
    _, G = losses.supcon_from_gram(gram, y)
    h = 1e-6
    for i in range(5):
        for j in range(5):
            if i == j:
                continue
            up, dn = gram.copy(), gram.copy()
            up[i, j] += h
            dn[i, j] -= h
            fd = (losses.supcon_from_gram(up, y)[0] - losses.supcon_from_gram(dn, y)[0]) / (2 * h)
            assert abs(fd - G[i, j]) < 1e-6


# --- combined ------------------------------------------------------------------------


def _batch(rng):
    s = rng.uniform(0.1, 0.9, size=6)
    z = rng.normal(size=(6, 4))
    y = np.array([0, 1, 1, 0, 1, 0], dtype=float)
    return s, z, y


def test_combined_lambda_zero_is_ce(rng):
    s, z, y = _batch(rng)
    assert losses.combined_loss(s, y, z, lam=0.0)[0] == losses.ce_loss(s, y)[0]


def test_combined_compositional(rng):
    s, z, y = _batch(rng)
    total, _, _ = losses.combined_loss(s, y, z, lam=0.1)
    ce = losses.ce_loss(s, y)[0]
    sc = supcon_oracle(z, y, 0.1)
    assert abs(total - (ce + 0.1 * sc)) < 1e-12


def test_combined_linear_in_lambda(rng):
    s, z, y = _batch(rng)
    ce = losses.ce_loss(s, y)[0]
    a = losses.combined_loss(s, y, z, lam=0.1)[0] - ce
    b = losses.combined_loss(s, y, z, lam=0.2)[0] - ce
    assert abs(b - 2 * a) < 1e-12


def test_combined_rejects_negative_lambda(rng):
    s, z, y = _batch(rng)
    with pytest.raises(ValueError):
        losses.combined_loss(s, y, z, lam=-0.1)


def test_combined_node_gradient(rng):
    s, z, y = _batch(rng)

    def f(ts):
        return losses.combined_node(ts[0], ts[1], y, 0.1, 0.1)

    assert nc.grad_check(f, [s, z]) < 1e-4


def test_combined_node_matches_array_gradient(rng):
    s, z, y = _batch(rng)
    ts, tz = Tensor(s, requires_grad=True), Tensor(z, requires_grad=True)
    with nc.Tape() as tape:
        loss = losses.combined_node(ts, tz, y, 0.3)
    tape.backward(loss)
    val, gs, gz = losses.combined_loss(s, y, z, 0.3)
    assert abs(loss.item() - val) < 1e-14
    assert np.allclose(ts.grad, gs, atol=1e-15) and np.allclose(tz.grad, gz, atol=1e-15)
