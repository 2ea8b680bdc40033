"""Run configuration, stored as a key-value ``[run]`` section in an INI-style file."""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..model import Architecture


@dataclass(frozen=True)
class RunConfig:
    # protocol: base synthetic style(s) and the adaptation order
    base_synthetic: tuple[str, ...] = ("S0",)
    adaptation_order: tuple[str, ...] = ("S1", "S2", "S3", "S4", "S5")
    styles_manifest: str = ""

    # data sizes (per style)
    raw_size: int = 40
    real_train: int = 1000
    real_test: int = 200
    base_train: int = 2000
    base_test: int = 500
    shots: int = 100
    shot_pool: int = 200
    adapt_test: int = 500

    # detector
    patch: int = 32
    hidden: tuple[int, ...] = (128,)
    feature_dim: int = 64

    # optimization
    base_epochs: int = 5
    base_batch: int = 256
    adapt_epochs: int = 10
    adapt_batch: int = 64
    lr_max: float = 1e-3
    lr_min: float = 1e-4
    weight_decay: float = 0.01
    val_fraction: float = 0.1

    # adaptation objective and replay
    lam: float = 0.1
    beta: float = 0.1
    supcon_norm: str = "paper"
    n0: int = 100
    replay: bool = True
    balanced_batches: bool = False

    # evaluation
    tau: float = 0.5
    fdr_target: float = 0.001

    seed: int = 0
    data_seed: int = 0
    out_dir: str = field(default_factory=lambda: os.environ.get("CFSD_OUT", "runs"))

    def __post_init__(self):
        positive = {
            "raw_size": self.raw_size, "real_train": self.real_train, "real_test": self.real_test,
            "base_train": self.base_train, "base_test": self.base_test, "shots": self.shots,
            "adapt_test": self.adapt_test, "patch": self.patch, "feature_dim": self.feature_dim,
            "base_epochs": self.base_epochs, "base_batch": self.base_batch,
            "adapt_epochs": self.adapt_epochs, "adapt_batch": self.adapt_batch,
            "lr_max": self.lr_max, "lr_min": self.lr_min, "beta": self.beta, "n0": self.n0,
        }
        for name, val in positive.items():
            if val <= 0:
                raise ValueError(f"{name} must be positive")
        if self.shot_pool < self.shots:
            raise ValueError("shot_pool must be >= shots")
        if self.patch > self.raw_size:
            raise ValueError("patch larger than raw image")
        if self.lam < 0 or self.weight_decay < 0:
            raise ValueError("lam and weight_decay must be non-negative")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not 0 <= self.tau <= 1 or not 0 < self.fdr_target < 1:
            raise ValueError("tau must lie in [0, 1] and fdr_target in (0, 1)")
        tags = [*self.base_synthetic, *self.adaptation_order]
        if len(set(tags)) != len(tags):
            raise ValueError("protocol styles must be unique")
        if self.supcon_norm not in ("paper", "positives"):
            raise ValueError("supcon_norm must be 'paper' or 'positives'")

    @property
    def arch(self) -> Architecture:
        return Architecture((self.patch, self.patch), tuple(self.hidden), self.feature_dim)

    def with_(self, **kw) -> RunConfig:
        return replace(self, **kw)

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("out_dir")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()[:16]

    def to_text(self) -> str:
        lines = [f"{key} = {_fmt(val)}" for key, val in asdict(self).items()]
        return "[run]\n" + "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> RunConfig:
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if "run" not in cp:
            raise ValueError("config needs a [run] section")
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in cp["run"].items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kw[key] = _parse(raw, known[key].type)
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_text(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, typ: str):
    raw = raw.strip()
    if typ == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if typ == "tuple[str, ...]":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if typ == "tuple[int, ...]":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def paper_config(**kw) -> RunConfig:
    """Optimization values as reported for the ViT-Small setting."""
    return RunConfig(lr_max=1e-5, lr_min=1e-6, **kw)
