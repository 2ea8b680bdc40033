"""Replay, shot-count and lambda sweeps over paired seeds; writes one CSV per sweep.

    python scripts/ablations.py --which replay,shots,lambda --seeds 0,1,2
"""

import argparse
from pathlib import Path

from cfsd.harness import RunConfig
from cfsd.harness.ablations import run_ablations


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--which", default="replay,shots,lambda")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="runs/ablations")
    args = ap.parse_args()

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    for name, rep in run_ablations(cfg, seeds, args.which.split(",")).items():
        (out / f"{name}.csv").write_text(rep.to_csv())
        print(rep.format(), end="\n\n")


if __name__ == "__main__":
    main()
