"""Full protocol: data, base stage, sequential adaptation, per-stage evaluation, persistence."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics
from ..model import DetectorParams, load_checkpoint, save_checkpoint
from ..optim import OptState
from ..replay import ReplayBuffer, init_buffer
from ..styledata import (
    REAL,
    Dataset,
    StyleSpec,
    default_protocol_styles,
    derive_seed,
    gen_style,
    read_manifest,
    split,
)
from .config import RunConfig
from .train import adapt_step, inputs_of, score_sets, train_base

BASE_ROW = "base"


@dataclass
class ProtocolData:
    styles: dict[str, StyleSpec]
    d0_train: Dataset
    real_test: Dataset
    style_tests: dict[str, Dataset]
    shot_pools: dict[str, Dataset]
    X_real_test: np.ndarray
    X_style_tests: dict[str, np.ndarray]

    def shots(self, tag: str, n: int) -> Dataset:
        pool = self.shot_pools[tag]
        if n > len(pool):
            raise ValueError(f"{n} shots requested, pool holds {len(pool)}")
        return pool.head(n)


def style_table(cfg: RunConfig) -> dict[str, StyleSpec]:
    specs = read_manifest(cfg.styles_manifest) if cfg.styles_manifest else default_protocol_styles()
    table = {s.tag: s for s in specs}
    for tag in [*cfg.base_synthetic, *cfg.adaptation_order]:
        if tag not in table:
            raise ValueError(f"protocol style {tag!r} not defined")
    return table


def _data_key(cfg: RunConfig) -> tuple:
    return (
        cfg.styles_manifest, cfg.base_synthetic, cfg.adaptation_order, cfg.raw_size, cfg.real_train,
        cfg.real_test, cfg.base_train, cfg.base_test, cfg.shot_pool, cfg.adapt_test, cfg.patch, cfg.data_seed,
    )


_DATA_CACHE: dict[tuple, ProtocolData] = {}


def build_protocol_data(cfg: RunConfig) -> ProtocolData:
    """Generate (or fetch from the in-process cache) every split the protocol needs."""
    key = _data_key(cfg)
    if key in _DATA_CACHE:
        return _DATA_CACHE[key]
    table = style_table(cfg)
    reals = [s for s in table.values() if s.label == REAL]
    train_parts, real_tests, style_tests, pools = [], [], {}, {}
    for spec in reals:
        full = gen_style(spec, cfg.real_train + cfg.real_test, derive_seed(cfg.data_seed, spec.tag, spec.seed), cfg.raw_size)
        tr, te = split(full, cfg.real_test / len(full), derive_seed(cfg.data_seed, "split"))
        train_parts.append(tr)
        real_tests.append(te)
    for tag in cfg.base_synthetic:
        spec = table[tag]
        full = gen_style(spec, cfg.base_train + cfg.base_test, derive_seed(cfg.data_seed, tag, spec.seed), cfg.raw_size)
        tr, te = split(full, cfg.base_test / len(full), derive_seed(cfg.data_seed, "split"))
        train_parts.append(tr)
        style_tests[tag] = te
    for tag in cfg.adaptation_order:
        spec = table[tag]
        pools[tag] = gen_style(spec, cfg.shot_pool, derive_seed(cfg.data_seed, tag, spec.seed, "shots"), cfg.raw_size)
        style_tests[tag] = gen_style(spec, cfg.adapt_test, derive_seed(cfg.data_seed, tag, spec.seed, "test"), cfg.raw_size)
    real_test = Dataset.concat(real_tests)
    data = ProtocolData(
        table,
        Dataset.concat(train_parts),
        real_test,
        style_tests,
        pools,
        inputs_of(real_test, cfg),
        {k: inputs_of(v, cfg) for k, v in style_tests.items()},
    )
    _DATA_CACHE[key] = data
    return data


@dataclass
class RunRecord:
    config: RunConfig
    config_hash: str
    seed: int
    stages: list[str] = field(default_factory=list)
    params: dict[str, DetectorParams] = field(default_factory=dict)
    buffers: dict[str, ReplayBuffer] = field(default_factory=dict)
    rows: dict[str, tuple[np.ndarray, dict[str, np.ndarray]]] = field(default_factory=dict)
    base_trace: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    out_dir: Path | None = None

    @property
    def matrix(self) -> metrics.AdaptationMatrix:
        m = metrics.build_matrix(self.rows, self.config.tau, self.config.fdr_target)
        m.meta = {"config_hash": self.config_hash, "seed": self.seed}
        return m

    @property
    def complete(self) -> bool:
        return len(self.stages) == 1 + len(self.config.adaptation_order)


def _stage_names(cfg: RunConfig) -> list[str]:
    return [BASE_ROW, *cfg.adaptation_order]


def evaluate(params: DetectorParams, data: ProtocolData, cfg: RunConfig):
    order = [*cfg.base_synthetic, *cfg.adaptation_order]
    real, per_style = score_sets(params, data.X_real_test, {k: data.X_style_tests[k] for k in order})
    return real, per_style


# --- persistence -----------------------------------------------------------------------


def _ckpt_path(out: Path, stage: str) -> Path:
    return out / f"{stage}.ckpt"


def _persist_stage(rec: RunRecord, stage: str, state: OptState | None) -> None:
    out = rec.out_dir
    if out is None:
        return
    meta = {"stage": stage, "config_hash": rec.config_hash, "optimizer": state.hyper() if state else None}
    save_checkpoint(_ckpt_path(out, stage), rec.params[stage], state.blocks() if state else None, meta)
    (out / f"{stage}.buffer.json").write_text(rec.buffers[stage].snapshot())
    progress = {
        "config_hash": rec.config_hash,
        "seed": rec.seed,
        "stages": rec.stages,
        "base_trace": rec.base_trace,
    }
    (out / "record.json").write_text(json.dumps(progress, indent=1))
    (out / "matrix.csv").write_text(rec.matrix.to_csv())


def _finalize(rec: RunRecord) -> None:
    out = rec.out_dir
    if out is None:
        return
    m = rec.matrix
    (out / "matrix.csv").write_text(m.to_csv())
    (out / "report.json").write_text(m.to_report())
    meta = [
        f"config_hash = {rec.config_hash}",
        f"seed = {rec.seed}",
        f"stages = {', '.join(rec.stages)}",
        f"complete = {rec.complete}",
    ]
    (out / "run.txt").write_text("\n".join(meta) + "\n")


def _resume(rec: RunRecord, data: ProtocolData) -> None:
    out = rec.out_dir
    path = out / "record.json"
    if not path.exists():
        return
    progress = json.loads(path.read_text())
    if progress["config_hash"] != rec.config_hash or progress["seed"] != rec.seed:
        raise ValueError(f"{out} holds a run with a different config or seed")
    pool = Dataset.concat([data.d0_train, *data.shot_pools.values()])
    for stage in progress["stages"]:
        params, _, _ = load_checkpoint(_ckpt_path(out, stage))
        rec.params[stage] = params
        rec.buffers[stage] = ReplayBuffer.restore((out / f"{stage}.buffer.json").read_text(), pool)
        rec.rows[stage] = evaluate(params, data, rec.config)
        rec.stages.append(stage)
    rec.base_trace = progress["base_trace"]


# --- protocol ----------------------------------------------------------------------------


_BASE_CACHE: dict[str, tuple] = {}


def base_key(cfg: RunConfig) -> str:
    """Hash over every setting that influences the base stage."""
    ignore = {"lam", "supcon_norm", "replay", "shots", "adapt_epochs", "adapt_batch", "adaptation_order"}
    canon = {k: v for k, v in cfg.canonical().items() if k not in ignore}
    canon["_data"] = list(map(str, _data_key(cfg)))
    return json.dumps(canon, sort_keys=True)


def run_base_stage(cfg: RunConfig, data: ProtocolData):
    key = base_key(cfg)
    if key not in _BASE_CACHE:
        res = train_base(data.d0_train, cfg)
        buffer = init_buffer(data.d0_train, cfg.n0, derive_seed(cfg.seed, "buffer"))
        trace = [vars(t) for t in res.trace]
        _BASE_CACHE[key] = (res.params, buffer, res.opt_state, trace)
    params, buffer, state, trace = _BASE_CACHE[key]
    return params.copy(), buffer, state, list(trace)


def clear_caches() -> None:
    """Drop cached protocol data and base-stage results."""
    _DATA_CACHE.clear()
    _BASE_CACHE.clear()


def run_protocol(cfg: RunConfig, out_dir: str | Path | None = None, stop_after: int | None = None) -> RunRecord:
    """Base stage then each adaptation stage, scoring every test set after each.

    With ``out_dir`` every completed stage is persisted and an existing partial
    run for the same config and seed is resumed. ``stop_after`` ends the run
    after that many stages (the base stage counts as one).
    """
    t0 = time.perf_counter()
    data = build_protocol_data(cfg)
    rec = RunRecord(cfg, cfg.hash(), cfg.seed)
    if out_dir is not None:
        rec.out_dir = Path(out_dir)
        rec.out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(rec.out_dir / "config.cfg")
        _resume(rec, data)

    names = _stage_names(cfg)
    limit = len(names) if stop_after is None else min(stop_after, len(names))
    for k in range(len(rec.stages), limit):
        stage = names[k]
        if k == 0:
            params, buffer, state, rec.base_trace = run_base_stage(cfg, data)
        else:
            prev = names[k - 1]
            dk = data.shots(stage, cfg.shots)
            params, buffer, state = adapt_step(rec.params[prev], rec.buffers[prev], dk, cfg, stage=k)
        rec.params[stage] = params
        rec.buffers[stage] = buffer
        rec.rows[stage] = evaluate(params, data, cfg)
        rec.stages.append(stage)
        _persist_stage(rec, stage, state)
    rec.wall_clock = time.perf_counter() - t0
    _finalize(rec)
    return rec
