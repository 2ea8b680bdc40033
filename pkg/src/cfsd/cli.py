"""Command-line entry point: ``cfsd <subcommand> [--config F] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import metrics, styledata
from .harness import protocol
from .harness.ablations import run_ablations
from .harness.config import RunConfig
from .harness.train import adapt_step, inputs_of, score_sets, train_base
from .model import load_checkpoint, save_checkpoint
from .replay import ReplayBuffer, init_buffer
from .styledata import Dataset, derive_seed


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d, help="run configuration file ([run] key = value)")
    p.add_argument("--seed", type=int, default=d, help="run seed (unsigned 64-bit)")
    p.add_argument("--out", default=d, help="output directory (default: $CFSD_OUT or config out_dir)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="cfsd", parents=[common], description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    sub.add_parser("gen-data", parents=[common], help="write protocol datasets and the style manifest")

    p = sub.add_parser("train-base", parents=[common], help="train the base detector")
    p.add_argument("--dataset", help="train on this dataset file instead of generated data")

    p = sub.add_parser("adapt", parents=[common], help="run one adaptation stage")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--buffer", help="buffer snapshot of the previous stage (default: next to checkpoint)")
    p.add_argument("--style", required=True, help="adaptation style tag")
    p.add_argument("--stage", type=int, help="stage index for shuffling (default: position in protocol)")

    p = sub.add_parser("eval", parents=[common], help="score a dataset with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--real", help="real test set (default: real samples in --dataset, else generated)")

    sub.add_parser("run-protocol", parents=[common], help="base stage plus all adaptation stages")

    p = sub.add_parser("ablate", parents=[common], help="replay / shots / lambda sweeps")
    p.add_argument("--which", default="replay,shots,lambda")
    p.add_argument("--seeds", default="0,1,2")

    p = sub.add_parser("report", parents=[common], help="print the matrix of a finished run")
    p.add_argument("--run", help="run directory (default: --out)")
    p.add_argument("--json", action="store_true", help="print the structured report instead")
    return parser


def _config(args) -> tuple[RunConfig, Path]:
    path = getattr(args, "config", None)
    cfg = RunConfig.load(path) if path else RunConfig()
    seed = getattr(args, "seed", None)
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        cfg = cfg.with_(seed=seed)
    out = getattr(args, "out", None) or cfg.out_dir
    return cfg, Path(out)


def cmd_gen_data(cfg: RunConfig, out: Path, args) -> None:
    data = protocol.build_protocol_data(cfg)
    ddir = out / "data"
    ddir.mkdir(parents=True, exist_ok=True)
    styledata.write_manifest(list(data.styles.values()), ddir / "styles.manifest")
    for tag in data.d0_train.style_order():
        styledata.save(data.d0_train.by_style(tag), ddir / f"{tag}_train.cfsdat")
    for tag in data.real_test.style_order():
        styledata.save(data.real_test.by_style(tag), ddir / f"{tag}_test.cfsdat")
    for tag, ds in data.style_tests.items():
        styledata.save(ds, ddir / f"{tag}_test.cfsdat")
    for tag in cfg.adaptation_order:
        styledata.save(data.shots(tag, cfg.shots), ddir / f"{tag}_shots.cfsdat")
    print(f"wrote {len(list(ddir.glob('*.cfsdat')))} dataset files to {ddir}")


def cmd_train_base(cfg: RunConfig, out: Path, args) -> None:
    out.mkdir(parents=True, exist_ok=True)
    d0 = styledata.load(args.dataset) if args.dataset else protocol.build_protocol_data(cfg).d0_train
    res = train_base(d0, cfg)
    buffer = init_buffer(d0, cfg.n0, derive_seed(cfg.seed, "buffer"))
    meta = {"stage": "base", "config_hash": cfg.hash(), "optimizer": res.opt_state.hyper()}
    save_checkpoint(out / "base.ckpt", res.params, res.opt_state.blocks(), meta)
    (out / "base.buffer.json").write_text(buffer.snapshot())
    for t in res.trace:
        print(f"epoch {t.epoch}: val TDR@{100 * cfg.fdr_target:g}%FDR={100 * t.val_tdr_at_fdr:.2f} CE={t.val_ce:.5f}")
    print(f"selected epoch {res.best_epoch}; wrote {out / 'base.ckpt'}")


def cmd_adapt(cfg: RunConfig, out: Path, args) -> None:
    data = protocol.build_protocol_data(cfg)
    if args.style not in data.shot_pools:
        raise ValueError(f"{args.style!r} is not an adaptation style of this protocol")
    params, _, _ = load_checkpoint(args.checkpoint)
    ckpt = Path(args.checkpoint)
    buf_path = Path(args.buffer) if args.buffer else ckpt.with_name(ckpt.stem + ".buffer.json")
    pool = Dataset.concat([data.d0_train, *data.shot_pools.values()])
    buffer = ReplayBuffer.restore(buf_path.read_text(), pool)
    stage = args.stage if args.stage is not None else 1 + cfg.adaptation_order.index(args.style)
    new_params, new_buffer, state = adapt_step(params, buffer, data.shots(args.style, cfg.shots), cfg, stage)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"stage": args.style, "config_hash": cfg.hash(), "optimizer": state.hyper()}
    save_checkpoint(out / f"{args.style}.ckpt", new_params, state.blocks(), meta)
    (out / f"{args.style}.buffer.json").write_text(new_buffer.snapshot())
    print(f"wrote {out / (args.style + '.ckpt')} (buffer holds {len(new_buffer)} samples)")


def cmd_eval(cfg: RunConfig, out: Path, args) -> None:
    params, _, _ = load_checkpoint(args.checkpoint)
    ds = styledata.load(args.dataset)
    if args.real:
        real = styledata.load(args.real)
    elif (ds.labels == styledata.REAL).any():
        real = ds.where_label(styledata.REAL)
    else:
        real = protocol.build_protocol_data(cfg).real_test
    cfg = cfg.with_(patch=params.arch.patch[0])
    fake = ds.where_label(styledata.SYNTHETIC)
    X_styles = {tag: inputs_of(fake.by_style(tag), cfg) for tag in fake.style_order()}
    real_s, per_style = score_sets(params, inputs_of(real, cfg), X_styles)
    print(f"style,tdr_at_tau,fdr_at_tau,tdr_at_fdr  (tau={cfg.tau}, fdr_target={100 * cfg.fdr_target:g}%)")
    for tag, s in per_style.items():
        cell = metrics.cell_metrics(metrics.ScoreSet(real_s, s, args.checkpoint, tag), cfg.tau, cfg.fdr_target)
        print(f"{tag}," + ",".join(f"{100 * v:.4f}" for v in cell))
    if not per_style:
        print(f"no synthetic samples; FDR@tau={100 * float(np.mean(real_s >= cfg.tau)):.4f}")


def cmd_run_protocol(cfg: RunConfig, out: Path, args) -> None:
    rec = protocol.run_protocol(cfg, out)
    print(rec.matrix.format_table())
    print(f"wrote {out / 'matrix.csv'} ({rec.wall_clock:.1f}s)")


def cmd_ablate(cfg: RunConfig, out: Path, args) -> None:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    which = [w.strip() for w in args.which.split(",") if w.strip()]
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in run_ablations(cfg, seeds, which).items():
        (out / f"ablation_{name}.csv").write_text(rep.to_csv())
        print(rep.format())
        print()


def cmd_report(cfg: RunConfig, out: Path, args) -> None:
    run = Path(args.run) if args.run else out
    path = run / ("report.json" if args.json else "matrix.csv")
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run run-protocol first")
    if args.json:
        print(path.read_text())
    else:
        print(metrics.AdaptationMatrix.from_csv(path.read_text(), cfg.tau, cfg.fdr_target).format_table())


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-base": cmd_train_base,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "run-protocol": cmd_run_protocol,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, out = _config(args)
        COMMANDS[args.command](cfg, out, args)
    except (OSError, ValueError) as exc:
        print(f"cfsd: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
