"""Nominal vs tightened planner on matched seeds (RF rate, cost, d_min, solve time).

    python scripts/table1.py --trials 1000 --parallel 4
"""
import argparse
import os

from prfmpc.config import load_config
from prfmpc.sim import run_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=None)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--parallel", type=int, default=int(os.environ.get("PRFMPC_THREADS", 1)))
    args = ap.parse_args()

    cfg = load_config(args.config, {"seed": args.seed}).trial
    print(f"{'variant':8s} {'RF rate':>8s} {'cost':>8s} {'d_min':>7s} {'time [s]':>9s}")
    for variant in ("nominal", "prf"):
        m = run_batch(cfg, args.trials, variant, args.parallel)
        print(f"{variant:8s} {100 * m.rf_rate:7.1f}% {m.mean_cost:8.3f} {m.mean_d_min:7.3f} "
              f"{m.mean_max_solve_time:9.4f}")


if __name__ == "__main__":
    main()
