"""Replay on/off, shot-count and lambda sweeps sharing seeds (and the base stage)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .protocol import RunRecord, run_protocol

SHOT_COUNTS = (10, 50, 100, 200)
LAMBDAS = (0.0, 0.01, 0.1, 1.0)


def diagonal(rec: RunRecord, metric: int = 0) -> np.ndarray:
    """Per stage k: metric on style k right after adapting to it."""
    m = rec.matrix
    return np.array([m.cell(s, s)[metric] for s in rec.config.adaptation_order])


def previous_style(rec: RunRecord, metric: int = 0) -> np.ndarray:
    """Per stage k >= 2: metric on style k-1 after adapting to style k."""
    order = rec.config.adaptation_order
    m = rec.matrix
    return np.array([m.cell(order[k], order[k - 1])[metric] for k in range(1, len(order))])


def final_mean(rec: RunRecord, metric: int = 2) -> float:
    return float(rec.matrix.mean[-1][metric])


@dataclass
class SweepReport:
    name: str
    rows: list[dict] = field(default_factory=list)

    def format(self) -> str:
        keys = list(self.rows[0]) if self.rows else []
        lines = [self.name, "  ".join(f"{k:>14}" for k in keys)]
        for r in self.rows:
            lines.append("  ".join(f"{_cell(r[k]):>14}" for k in keys))
        return "\n".join(lines)

    def to_csv(self) -> str:
        keys = list(self.rows[0]) if self.rows else []
        body = [",".join(keys)] + [",".join(_cell(r[k]) for k in keys) for r in self.rows]
        return "\n".join(body) + "\n"


def _cell(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def replay_ablation(cfg: RunConfig, seeds) -> SweepReport:
    rep = SweepReport("replay")
    for seed in seeds:
        for replay in (True, False):
            rec = run_protocol(cfg.with_(seed=seed, replay=replay))
            prev = previous_style(rec)
            prev_at = previous_style(rec, metric=2)
            rep.rows.append({
                "seed": seed,
                "replay": replay,
                "min_prev_tdr": 100 * float(prev.min()),
                "mean_prev_tdr": 100 * float(prev.mean()),
                "min_prev_tdr@": 100 * float(prev_at.min()),
                "final_fdr": 100 * float(rec.matrix.mean[-1][1]),
            })
    return rep


def shots_ablation(cfg: RunConfig, seeds, shot_counts=SHOT_COUNTS) -> SweepReport:
    rep = SweepReport("shots")
    cfg = cfg.with_(shot_pool=max(max(shot_counts), cfg.shot_pool))
    for shots in shot_counts:
        vals = [diagonal(run_protocol(cfg.with_(seed=s, shots=shots))) for s in seeds]
        rep.rows.append({
            "shots": shots,
            "mean_new_tdr": 100 * float(np.mean(vals)),
            **{f"seed{s}": 100 * float(np.mean(v)) for s, v in zip(seeds, vals)},
        })
    return rep


def lambda_ablation(cfg: RunConfig, seeds, lambdas=LAMBDAS) -> SweepReport:
    rep = SweepReport("lambda")
    for lam in lambdas:
        recs = [run_protocol(cfg.with_(seed=s, lam=lam)) for s in seeds]
        rep.rows.append({
            "lambda": lam,
            "mean_new_tdr": 100 * float(np.mean([diagonal(r) for r in recs])),
            "final_mean_tdr@": 100 * float(np.mean([final_mean(r) for r in recs])),
            "min_prev_tdr": 100 * float(np.mean([previous_style(r).min() for r in recs])),
        })
    return rep


def run_ablations(cfg: RunConfig, seeds=(0, 1, 2), which=("replay", "shots", "lambda")) -> dict[str, SweepReport]:
    runners = {"replay": replay_ablation, "shots": shots_ablation, "lambda": lambda_ablation}
    unknown = set(which) - set(runners)
    if unknown:
        raise ValueError(f"unknown ablations {sorted(unknown)}")
    return {name: runners[name](cfg, list(seeds)) for name in which}
