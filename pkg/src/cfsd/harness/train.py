"""Base training, single adaptation stages, and checkpoint scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .. import losses, metrics, optim
from .. import numcore as nc
from ..model import DetectorParams, flatten_patches, forward, init_params, preprocess_batch, score_patches
from ..replay import ReplayBuffer, assemble, extend
from ..styledata import SYNTHETIC, Dataset, derive_seed, split
from .config import RunConfig


@dataclass
class EpochRecord:
    epoch: int
    val_tdr_at_fdr: float
    val_ce: float


@dataclass
class BaseResult:
    params: DetectorParams
    trace: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    opt_state: optim.OptState | None = None


def inputs_of(ds: Dataset, cfg: RunConfig) -> np.ndarray:
    return flatten_patches(preprocess_batch(ds.pixels, (cfg.patch, cfg.patch)))


def epoch_order(labels: np.ndarray, styles: np.ndarray, rng: np.random.Generator, balanced: bool) -> np.ndarray:
    n = len(labels)
    if not balanced:
        return rng.permutation(n)
    # spread every style evenly over the epoch
    key = np.empty(n)
    for tag in dict.fromkeys(styles):
        members = np.flatnonzero(styles == tag)
        ranks = rng.permutation(len(members))
        key[members] = (ranks + rng.uniform(size=len(members))) / len(members)
    return np.argsort(key, kind="stable")


def train_epochs(
    params: DetectorParams,
    X: np.ndarray,
    y: np.ndarray,
    styles: np.ndarray,
    *,
    epochs: int,
    batch: int,
    cfg: RunConfig,
    lam: float,
    stage: int,
    on_epoch=None,
) -> tuple[DetectorParams, optim.OptState]:
    """Mini-batch AdamW on CE (+ lam * SC on the features) with a fresh cosine schedule."""
    if epochs < 1:
        raise ValueError("need at least one epoch")
    n = len(X)
    per_epoch = math.ceil(n / batch)
    arrays = [a.copy() for a in params.arrays]
    state = optim.OptState.for_params(
        arrays,
        lr_max=cfg.lr_max,
        lr_min=cfg.lr_min,
        weight_decay=cfg.weight_decay,
        total_steps=epochs * per_epoch,
    )
    with threadpool_limits(1):
        for epoch in range(epochs):
            rng = np.random.default_rng(derive_seed(cfg.seed, stage, epoch, "shuffle"))
            order = epoch_order(y, styles, rng, cfg.balanced_batches)
            for b in range(per_epoch):
                idx = order[b * batch : (b + 1) * batch]
                leaves = [nc.Tensor(a, requires_grad=True) for a in arrays]
                with nc.Tape() as tape:
                    z, s = forward(leaves, nc.Tensor(X[idx]))
                    if lam > 0 and len(idx) >= 2:
                        loss = losses.combined_node(s, z, y[idx], lam, cfg.beta, cfg.supcon_norm)
                    else:
                        loss = losses.ce_node(s, y[idx])
                grads = tape.backward(loss)
                arrays, state = optim.step(arrays, [grads[t] for t in leaves], state)
            if on_epoch is not None:
                on_epoch(epoch, DetectorParams(params.arch, arrays))
    return DetectorParams(params.arch, arrays), state


def validation_metrics(params: DetectorParams, X: np.ndarray, y: np.ndarray, fdr_target: float) -> tuple[float, float]:
    s = score_patches(params, X)
    ce, _ = losses.ce_loss(s, y)
    tdr, _ = metrics.tdr_at_fdr(metrics.ScoreSet(s[y == 0], s[y == 1]), fdr_target)
    return tdr, ce


def train_base(d0_train: Dataset, cfg: RunConfig) -> BaseResult:
    """CE-only training on D0; keeps the epoch with the best validation TDR@FDR (ties: lower CE)."""
    labels = set(int(v) for v in d0_train.labels)
    if labels != {0, 1}:
        raise ValueError("base training set must contain both real and synthetic samples")
    if cfg.base_epochs < 1:
        raise ValueError("base_epochs must be >= 1")
    fit, val = split(d0_train, cfg.val_fraction, derive_seed(cfg.seed, "val"))
    X_fit, X_val = inputs_of(fit, cfg), inputs_of(val, cfg)
    y_val = val.labels.astype(np.float64)
    params = init_params(cfg.arch, derive_seed(cfg.seed, "init"))

    trace: list[EpochRecord] = []
    best: dict = {}

    def on_epoch(epoch, p):
        tdr, ce = validation_metrics(p, X_val, y_val, cfg.fdr_target)
        trace.append(EpochRecord(epoch, tdr, ce))
        if not best or (tdr, -ce) > (best["tdr"], -best["ce"]):
            best.update(tdr=tdr, ce=ce, epoch=epoch, params=p.copy())

    _, state = train_epochs(
        params, X_fit, fit.labels.astype(np.float64), fit.styles,
        epochs=cfg.base_epochs, batch=cfg.base_batch, cfg=cfg, lam=0.0, stage=0, on_epoch=on_epoch,
    )
    return BaseResult(best["params"], trace, best["epoch"], state)


def adapt_step(
    params: DetectorParams,
    buffer: ReplayBuffer,
    dk: Dataset,
    cfg: RunConfig,
    stage: int,
) -> tuple[DetectorParams, ReplayBuffer, optim.OptState]:
    """Fine-tune on the assembled replay set (or on ``dk`` alone with replay off).

    Returns the final-epoch parameters and the extended buffer.
    """
    new_buffer = extend(buffer, dk)
    train_set = assemble(new_buffer) if cfg.replay else dk
    X = inputs_of(train_set, cfg)
    new_params, state = train_epochs(
        params, X, train_set.labels.astype(np.float64), train_set.styles,
        epochs=cfg.adapt_epochs, batch=cfg.adapt_batch, cfg=cfg, lam=cfg.lam, stage=stage,
    )
    return new_params, new_buffer, state


def score_sets(params: DetectorParams, X_real: np.ndarray, X_styles: dict[str, np.ndarray]):
    with threadpool_limits(1):
        real = score_patches(params, X_real)
        return real, {k: score_patches(params, v) for k, v in X_styles.items()}


def synthetic_only(ds: Dataset) -> Dataset:
    return ds.where_label(SYNTHETIC)
