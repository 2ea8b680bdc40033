"""Run the full protocol for one or more seeds and print each adaptation matrix.

    python scripts/run_protocol.py --seeds 0,1,2 --out runs/protocol
"""

import argparse
from pathlib import Path

from cfsd.harness import RunConfig, run_protocol


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="run configuration file")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--out", default="runs/protocol")
    ap.add_argument("--paper-rates", action="store_true", help="use lr 1e-5 / 1e-6 instead of the desk-scale rates")
    args = ap.parse_args()

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.paper_rates:
        cfg = cfg.with_(lr_max=1e-5, lr_min=1e-6)
    for seed in (int(s) for s in args.seeds.split(",")):
        rec = run_protocol(cfg.with_(seed=seed), Path(args.out) / f"seed{seed}")
        print(f"seed {seed}  ({rec.wall_clock:.1f}s)")
        print(rec.matrix.format_table())
        print()


if __name__ == "__main__":
    main()
