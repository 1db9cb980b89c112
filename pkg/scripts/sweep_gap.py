"""RF rate of both planners as the obstacle's initial longitudinal gap varies.

Used to pick the default obstacle start position.
"""
import argparse
from dataclasses import replace

from prfmpc.config import load_config
from prfmpc.sim import run_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gaps", default="6,6.5,7,7.5,8")
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()

    base = load_config().trial
    for gap in [float(g) for g in args.gaps.split(",")]:
        cfg = replace(base, ov_init=(-gap, base.ov_init[1]))
        n = run_batch(cfg, args.trials, "nominal", args.parallel)
        p = run_batch(cfg, args.trials, "prf", args.parallel)
        print(f"gap {gap:4.1f} m  nominal RF {n.rf_rate:.3f} (init {n.n_initially_feasible})  "
              f"prf RF {p.rf_rate:.3f} (init {p.n_initially_feasible})")


if __name__ == "__main__":
    main()
