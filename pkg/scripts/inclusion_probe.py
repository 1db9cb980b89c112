"""Monte Carlo frequency of the one-step safe-set inclusion event per (t, tau).

Also sweeps a margin scale to show how much of the tightening is needed.
"""
import argparse

import numpy as np

from prfmpc.config import load_config
from prfmpc.sim import inclusion_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=None)
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--scales", default="0,0.5,1,2")
    args = ap.parse_args()

    cfg = load_config(args.config).trial
    for scale in [float(s) for s in args.scales.split(",")]:
        p = inclusion_probe(cfg, args.samples, margin_scale=scale)
        freqs = np.array([p.pair_frequency[t, tau] for t, tau in p.pairs()])
        print(f"margin x{scale:<4g} min pair {freqs.min():.5f} (target {1 - p.gamma_bar:.5f})  "
              f"joint {p.joint_frequency:.4f} (target {1 - p.gamma:.2f})")


if __name__ == "__main__":
    main()
