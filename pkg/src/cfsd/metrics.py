"""TDR/FDR at a threshold, TDR at a fixed FDR, and the adaptation matrix."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

METRIC_KEYS = ("tdr_at_tau", "fdr_at_tau", "tdr_at_fdr")


@dataclass
class ScoreSet:
    real: np.ndarray
    synthetic: np.ndarray
    checkpoint: str = ""
    style: str = ""

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64)
        self.synthetic = np.asarray(self.synthetic, dtype=np.float64)
        for arr in (self.real, self.synthetic):
            if arr.size and (arr.min() < 0 or arr.max() > 1):
                raise ValueError("scores must lie in [0, 1]")


def tdr_fdr(scores: ScoreSet, tau: float = 0.5) -> tuple[float, float]:
    """Fractions of synthetic and real scores at or above ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if scores.real.size == 0 or scores.synthetic.size == 0:
        raise ValueError("both score lists must be non-empty")
    return float(np.mean(scores.synthetic >= tau)), float(np.mean(scores.real >= tau))


def tdr_at_fdr(scores: ScoreSet, fdr_target: float = 0.001) -> tuple[float, float]:
    """TDR at the smallest candidate threshold whose empirical FDR is <= ``fdr_target``.

    Candidates are the observed real scores plus the next float above the
    largest one (FDR 0 there, so a candidate always exists).
    Returns (TDR, threshold).
    """
    real = np.sort(scores.real)
    if real.size == 0:
        raise ValueError("real score list is empty")
    n = real.size
    cands = np.append(np.unique(real), np.nextafter(real[-1], np.inf))
    # FDR(c) = #(real >= c) / n, nonincreasing in c
    fdr = (n - np.searchsorted(real, cands, side="left")) / n
    tau = float(cands[np.argmax(fdr <= fdr_target)])
    syn = scores.synthetic
    tdr = float(np.mean(syn >= tau)) if syn.size else 0.0
    return tdr, tau


@dataclass
class AdaptationMatrix:
    """cells[i, j] = (TDR@tau, FDR@tau, TDR@fdr_target) for checkpoint i on style j."""

    checkpoints: list[str]
    styles: list[str]
    cells: np.ndarray
    tau: float = 0.5
    fdr_target: float = 0.001
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        if self.cells.shape != (len(self.checkpoints), len(self.styles), 3):
            raise ValueError(f"cells shape {self.cells.shape} is not rectangular over ids")

    @property
    def mean(self) -> np.ndarray:
        return self.cells.mean(axis=1)

    def cell(self, checkpoint: str, style: str) -> np.ndarray:
        return self.cells[self.checkpoints.index(checkpoint), self.styles.index(style)]

    def to_csv(self) -> str:
        """Long format, values in percent; one ``mean`` row closes each checkpoint."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["checkpoint", "style", *METRIC_KEYS])
        mean = self.mean
        for i, ck in enumerate(self.checkpoints):
            for j, st in enumerate(self.styles):
                w.writerow([ck, st, *(f"{100 * x:.4f}" for x in self.cells[i, j])])
            w.writerow([ck, "mean", *(f"{100 * x:.4f}" for x in mean[i])])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, tau: float = 0.5, fdr_target: float = 0.001) -> AdaptationMatrix:
        rows = [r for r in csv.DictReader(io.StringIO(text)) if r["style"] != "mean"]
        cks = list(dict.fromkeys(r["checkpoint"] for r in rows))
        sts = list(dict.fromkeys(r["style"] for r in rows))
        cells = np.full((len(cks), len(sts), 3), np.nan)
        for r in rows:
            cells[cks.index(r["checkpoint"]), sts.index(r["style"])] = [float(r[k]) / 100 for k in METRIC_KEYS]
        if np.isnan(cells).any():
            raise ValueError("matrix CSV is missing cells")
        return cls(cks, sts, cells, tau, fdr_target)

    def to_report(self) -> str:
        report = {
            "tau": self.tau,
            "fdr_target_percent": 100 * self.fdr_target,
            "checkpoints": self.checkpoints,
            "styles": self.styles,
            "cells_percent": {
                ck: {
                    st: dict(zip(METRIC_KEYS, (100 * self.cells[i, j]).round(4).tolist()))
                    for j, st in enumerate(self.styles)
                }
                for i, ck in enumerate(self.checkpoints)
            },
            "mean_percent": {ck: (100 * self.mean[i]).round(4).tolist() for i, ck in enumerate(self.checkpoints)},
            "meta": self.meta,
        }
        return json.dumps(report, indent=2, sort_keys=True)

    def format_table(self) -> str:
        head = f"{'checkpoint':<12}" + "".join(f"{s:>22}" for s in [*self.styles, "mean"])
        lines = [head, " " * 12 + "".join(f"{'TDR  FDR  TDR@':>22}" for _ in range(len(self.styles) + 1))]
        for i, ck in enumerate(self.checkpoints):
            row = [*self.cells[i], self.mean[i]]
            lines.append(f"{ck:<12}" + "".join(f"{100*a:7.2f}{100*b:7.2f}{100*c:8.2f}" for a, b, c in row))
        return "\n".join(lines)


def cell_metrics(scores: ScoreSet, tau: float = 0.5, fdr_target: float = 0.001) -> np.ndarray:
    tdr, fdr = tdr_fdr(scores, tau)
    tdr_f, _ = tdr_at_fdr(scores, fdr_target)
    return np.array([tdr, fdr, tdr_f])


def build_matrix(
    checkpoint_scores: dict[str, tuple[np.ndarray, dict[str, np.ndarray]]],
    tau: float = 0.5,
    fdr_target: float = 0.001,
) -> AdaptationMatrix:
    """Build the matrix from per-checkpoint (real scores, {style: synthetic scores}).

    Every checkpoint must be scored on the same set of styles.
    """
    cks = list(checkpoint_scores)
    if not cks:
        raise ValueError("no checkpoints")
    styles = list(checkpoint_scores[cks[0]][1])
    cells = np.zeros((len(cks), len(styles), 3))
    for i, ck in enumerate(cks):
        real, per_style = checkpoint_scores[ck]
        if list(per_style) != styles:
            raise ValueError(f"checkpoint {ck!r} scored on a different style set")
        for j, st in enumerate(styles):
            cells[i, j] = cell_metrics(ScoreSet(real, per_style[st], ck, st), tau, fdr_target)
    return AdaptationMatrix(cks, styles, cells, tau, fdr_target)
