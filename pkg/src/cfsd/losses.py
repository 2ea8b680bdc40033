"""Binary cross-entropy, supervised contrastive loss, and their weighted sum.

The array-level functions return ``(loss, gradient)``. The ``*_node`` variants
record the same computation as a single fused op on the active tape.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .numcore import Tensor

SCORE_CLAMP = 1e-12


class DegenerateBatchError(ValueError):
    pass


def ce_loss(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. the scores.

    Scores are clamped to [1e-12, 1 - 1e-12]; the gradient is zero where the
    clamp is active.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.size == 0:
        raise ValueError("ce_loss on an empty batch")
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ")
    n = s.size
    sc = np.clip(s, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    loss = -np.sum(y * np.log(sc) + (1.0 - y) * np.log(1.0 - sc)) / n
    inside = (s >= SCORE_CLAMP) & (s <= 1.0 - SCORE_CLAMP)
    grad = np.where(inside, (-y / sc + (1.0 - y) / (1.0 - sc)) / n, 0.0)
    return float(loss), grad


def supcon_loss(
    embeddings: np.ndarray,
    labels: np.ndarray,
    beta: float = 0.1,
    norm: str = "paper",
) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over L2-normalized embeddings, with gradient.

    For anchor i and each same-label j != i the term is
    -log(exp(u_i.u_j / beta) / sum_{l != i} exp(u_i.u_l / beta)).
    ``norm="paper"`` weights every term by 1/(n-1); ``norm="positives"`` by
    1/|P(i)|. Anchors are summed, and anchors without positives contribute 0,
    so a batch with no same-label pair has zero loss and zero gradient.
    """
    Z = np.asarray(embeddings, dtype=np.float64)
    if Z.shape[0] < 2:
        raise DegenerateBatchError("supcon needs at least two samples")
    U, norms = nc.l2_normalize_np(Z)
    loss, G = supcon_from_gram(U @ U.T, labels, beta, norm)
    dU = (G + G.T) @ U
    return loss, nc.l2_normalize_vjp(U, norms, dU)


def supcon_from_gram(
    gram: np.ndarray, labels: np.ndarray, beta: float = 0.1, norm: str = "paper"
) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss as a function of the dot-product matrix.

    Returns the loss and its gradient w.r.t. each (i, j) entry taken as an
    independent variable (the diagonal is unused and gets zero gradient).
    """
    if beta <= 0:
        raise ValueError("temperature beta must be positive")
    if norm not in ("paper", "positives"):
        raise ValueError(f"unknown supcon normalization {norm!r}")
    y = np.asarray(labels)
    n = gram.shape[0]
    if n < 2:
        raise DegenerateBatchError("supcon needs at least two samples")
    S = np.asarray(gram, dtype=np.float64) / beta
    off = ~np.eye(n, dtype=bool)
    pos = (y[:, None] == y[None, :]) & off
    n_pos = pos.sum(axis=1)
    if not n_pos.any():
        return 0.0, np.zeros((n, n))

    masked = np.where(off, S, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    ex = np.where(off, np.exp(masked - row_max), 0.0)
    denom = ex.sum(axis=1, keepdims=True)
    log_prob = S - (row_max + np.log(denom))

    if norm == "paper":
        w_anchor = np.full(n, 1.0 / (n - 1))
    else:
        w_anchor = np.where(n_pos > 0, 1.0 / np.maximum(n_pos, 1), 0.0)
    W = pos * w_anchor[:, None]
    loss = 0.0 - np.sum(W * log_prob)

    # dL/dS_ij = -W_ij + (sum_j W_ij) * softmax_ij over l != i
    G = -W + W.sum(axis=1, keepdims=True) * (ex / denom)
    return float(loss), G / beta


def combined_loss(
    scores: np.ndarray,
    labels: np.ndarray,
    embeddings: np.ndarray,
    lam: float = 0.1,
    beta: float = 0.1,
    norm: str = "paper",
) -> tuple[float, np.ndarray, np.ndarray]:
    """CE + lam * SC. Returns (loss, d/d scores, d/d embeddings)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ce, g_s = ce_loss(scores, labels)
    if lam == 0:
        return ce, g_s, np.zeros_like(np.asarray(embeddings, dtype=np.float64))
    sc, g_z = supcon_loss(embeddings, labels, beta, norm)
    return ce + lam * sc, g_s, lam * g_z


# --- tape-recorded variants ----------------------------------------------------


def ce_node(scores: Tensor, labels: np.ndarray) -> Tensor:
    loss, grad = ce_loss(scores.data, labels)
    return nc.fused("ce_loss", loss, (scores,), lambda g: (float(g) * grad,))


def supcon_node(z: Tensor, labels: np.ndarray, beta: float = 0.1, norm: str = "paper") -> Tensor:
    loss, grad = supcon_loss(z.data, labels, beta, norm)
    return nc.fused("supcon_loss", loss, (z,), lambda g: (float(g) * grad,))


def combined_node(
    scores: Tensor,
    z: Tensor,
    labels: np.ndarray,
    lam: float = 0.1,
    beta: float = 0.1,
    norm: str = "paper",
) -> Tensor:
    ce = ce_node(scores, labels)
    if lam == 0:
        return ce
    return nc.add(ce, nc.scale(supcon_node(z, labels, beta, norm), lam))
