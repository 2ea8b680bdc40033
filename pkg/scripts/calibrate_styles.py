"""Style-table calibration: artifact power against the real-style noise floor, and
5-epoch training accuracy of the default detector on {real-analogs, S_k}.

    python scripts/calibrate_styles.py
"""

import numpy as np

from cfsd.harness import RunConfig
from cfsd.harness.train import inputs_of, train_epochs
from cfsd.model import init_params, score_patches
from cfsd.styledata import REAL, Dataset, default_protocol_styles, gen_style


def peak_power(imgs, fx, fy):
    n = imgs.shape[-1]
    r, c = np.mgrid[0:n, 0:n]
    centered = imgs - imgs.mean(axis=(1, 2), keepdims=True)
    return float(np.mean(np.abs((centered * np.exp(-2j * np.pi * (fx * c + fy * r))).sum(axis=(1, 2))) ** 2) / n**4)


def main():
    styles = default_protocol_styles()
    cfg = RunConfig()
    reals = [gen_style(s, 100, seed=i) for i, s in enumerate(styles) if s.label == REAL]
    real_px = Dataset.concat(reals).pixels
    print(f"{'style':<6}{'artifact':>15}{'amp':>6}{'peak/real':>12}{'5-epoch acc':>13}")
    for spec in styles:
        if spec.label == REAL:
            continue
        ds = Dataset.concat([*reals, gen_style(spec, 800, seed=0)])
        X, y = inputs_of(ds, cfg), ds.labels.astype(float)
        params, _ = train_epochs(init_params(cfg.arch, 0), X, y, ds.styles, epochs=5, batch=64, cfg=cfg, lam=0.0, stage=0)
        acc = np.mean((score_patches(params, X) >= 0.5) == (y == 1))
        ratio = ""
        if spec.artifact == "spectral-peak":
            fake = ds.by_style(spec.tag).pixels
            ratio = f"{peak_power(fake, *spec.artifact_freq) / peak_power(real_px, *spec.artifact_freq):.0f}x"
        print(f"{spec.tag:<6}{spec.artifact:>15}{spec.artifact_amplitude:>6.2f}{ratio:>12}{acc:>13.4f}")


if __name__ == "__main__":
    main()
