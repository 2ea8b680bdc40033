import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cfsd import losses
from cfsd import numcore as nc
from cfsd.model import (
    Architecture,
    CheckpointFormatError,
    DetectorParams,
    as_tensors,
    detect,
    extract_features,
    forward,
    init_params,
    load_checkpoint,
    preprocess,
    save_checkpoint,
    score,
    score_features,
    score_patches,
    select_window,
    zeros_params,
)
from cfsd.numcore import Tensor


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def window_scan(raw, h, w):
    """Exhaustive per-window variance, first maximum in row-major order."""
    best, where = -1.0, None
    for r in range(raw.shape[0] - h + 1):
        for c in range(raw.shape[1] - w + 1):
            v = raw[r : r + h, c : c + w].var()
            if v > best + 1e-9 * max(1.0, best):
                best, where = v, (r, c)
    return where


# --- preprocessing ---------------------------------------------------------------


def test_constant_image_gives_half():
    out = preprocess(np.full((40, 40), 0.3))
    assert out.shape == (32, 32)
    assert np.all(out == 0.5)
    assert select_window(np.full((40, 40), 0.3), (32, 32)) == (0, 0)


def test_exact_size_crop_is_identity(rng):
    raw = rng.uniform(size=(32, 32))
    expect = (raw - raw.min()) / (raw.max() - raw.min())
    assert np.allclose(preprocess(raw), expect, atol=1e-12)


def test_bright_textured_quadrant_selected(rng):
    raw = np.full((64, 64), 0.1)
    raw[32:, 32:] = 0.5 + 0.4 * rng.uniform(-1, 1, size=(32, 32))
    r, c = select_window(raw, (32, 32))
    assert (r, c) == window_scan(raw, 32, 32)
    assert r + 32 > 32 and c + 32 > 32


@pytest.mark.parametrize("seed", range(5))
def test_window_matches_exhaustive_scan(seed):
    raw = np.random.default_rng(seed).uniform(size=(12, 14))
    assert select_window(raw, (5, 6)) == window_scan(raw, 5, 6)


def test_preprocess_too_small():
    with pytest.raises(ValueError):
        preprocess(np.zeros((10, 40)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1)))
def test_preprocess_idempotent_and_bounded(raw):
    once = preprocess(raw, (8, 8))
    assert once.min() >= 0.0 and once.max() <= 1.0
    assert np.allclose(preprocess(once, (8, 8)), once, atol=1e-9)


# --- extractor / head --------------------------------------------------------------


def test_zero_extractor_gives_zero_features():
    p = zeros_params(Architecture((4, 4), (6,), 4))
    z = extract_features(Tensor(np.ones((2, 16))), as_tensors(p)[:-4])
    assert np.array_equal(z.data, np.zeros((2, 4)))


def test_identity_weights_pass_patch_through(rng):
    arch = Architecture((4, 4), (), 16)
    p = zeros_params(arch)
    p.arrays[0][:] = np.eye(16)
    x = rng.uniform(size=(3, 16))
    assert np.array_equal(extract_features(Tensor(x), as_tensors(p)[:-4]).data, x)


def test_default_mlp_matches_straight_line(rng):
    p = init_params(Architecture(), seed=7)
    x = rng.uniform(size=(2, 1024))
    W0, b0, W1, b1, V0, c0, V1, c1 = p.arrays
    z = relu(x @ W0 + b0) @ W1 + b1
    s = sigmoid(relu(z @ V0 + c0) @ V1 + c1)[:, 0]
    z_t, s_t = forward(as_tensors(p), Tensor(x))
    assert np.max(np.abs(z_t.data - z)) < 1e-12
    assert np.max(np.abs(s_t.data - s)) < 1e-12


def test_zero_head_scores_half():
    p = zeros_params(Architecture((4, 4), (6,), 4))
    assert np.all(score_patches(p, np.ones((3, 4, 4))) == 0.5)


def test_saturated_bias():
    p = zeros_params(Architecture((4, 4), (6,), 4))
    p.arrays[-1][:] = 20.0
    assert score_patches(p, np.ones((1, 4, 4)))[0] > 0.999999


def test_random_head_matches_recomputation(rng):
    arch = Architecture((4, 4), (6,), 8)
    p = init_params(arch, 3)
    for a in p.arrays:
        a += rng.normal(scale=0.1, size=a.shape)
    z = rng.normal(size=(5, 8))
    V0, c0, V1, c1 = p.arrays[-4:]
    expect = sigmoid(relu(z @ V0 + c0) @ V1 + c1)[:, 0]
    got = score(Tensor(z), as_tensors(p)[-4:]).data
    assert np.max(np.abs(got - expect)) < 1e-12


@pytest.mark.parametrize("s,expect", [(0.7, 1), (0.5, 1), (0.3, 0)])
def test_detect_tie_rule(s, expect):
    assert detect(s, 0.5) == expect


def test_detect_rejects_bad_tau():
    with pytest.raises(ValueError):
        detect(0.5, 1.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_scores_in_open_unit_interval(seed):
    r = np.random.default_rng(seed)
    p = init_params(Architecture((4, 4), (6,), 4), seed)
    s = score_patches(p, r.uniform(size=(6, 4, 4)))
    assert np.all((s > 0) & (s < 1))
    assert all(detect(v) in (0, 1) for v in s)


def test_feature_mode_requires_identity(rng):
    p = init_params(Architecture((4, 4), (6,), 4), 0)
    with pytest.raises(ValueError):
        score_features(p, rng.uniform(size=(2, 4)))
    ident = init_params(Architecture((4, 4), (), 16, "identity"), 0)
    x = rng.uniform(size=(3, 16))
    assert np.array_equal(score_features(ident, x), score_patches(ident, x))


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture(feature_dim=63)
    with pytest.raises(ValueError):
        Architecture((4, 4), (), 8, "identity")
    with pytest.raises(ValueError):
        DetectorParams(Architecture((4, 4), (6,), 4), [np.zeros(3)])


def test_detector_loss_gradient_check(rng):
    arch = Architecture((4, 4), (6,), 4)
    p = init_params(arch, 11)
    x = rng.uniform(size=(4, 16))
    y = np.array([0.0, 1.0, 0.0, 1.0])

    def f(ts):
        z, s = forward(ts, Tensor(x))
        return losses.combined_node(s, z, y, 0.1, 0.1)

    assert nc.grad_check(f, p.arrays) < 1e-4


# --- checkpoints ---------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    p = init_params(Architecture((4, 4), (6,), 4), 5)
    extra = {"adamw.m.0": np.arange(3.0)}
    save_checkpoint(tmp_path / "a.ckpt", p, extra, {"stage": "base"})
    q, ex, meta = load_checkpoint(tmp_path / "a.ckpt")
    assert q.equals(p)
    assert np.array_equal(ex["adamw.m.0"], extra["adamw.m.0"])
    assert meta == {"stage": "base"}


@pytest.mark.parametrize("cut", ["magic", "truncate", "trailing"])
def test_checkpoint_corruption(tmp_path, cut):
    p = init_params(Architecture((4, 4), (6,), 4), 5)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, p)
    buf = path.read_bytes()
    buf = {"magic": b"XXXXX" + buf[5:], "truncate": buf[:-9], "trailing": buf + b"\0"}[cut]
    path.write_bytes(buf)
    with pytest.raises(CheckpointFormatError, match="offset"):
        load_checkpoint(path)
