"""Legacy sufficient-condition satisfaction rate and RF rates against the horizon.

Writes a CSV (default fig1.csv) for external plotting.
"""
import argparse
import csv
import os

from prfmpc.config import load_config
from prfmpc.sim import legacy_condition_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=None)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--horizons", default="2,3,4,5,6,7,8,9")
    ap.add_argument("--parallel", type=int, default=int(os.environ.get("PRFMPC_THREADS", 1)))
    ap.add_argument("--out", default="fig1.csv")
    args = ap.parse_args()

    cfg = load_config(args.config).trial
    horizons = [int(h) for h in args.horizons.split(",")]
    rows = legacy_condition_study(cfg, horizons, args.trials, args.parallel)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "satisfaction_rate", "nominal_rf_rate", "prf_rf_rate"])
        for r in rows:
            w.writerow([r.horizon, r.satisfaction_rate, r.nominal_rf_rate, r.prf_rf_rate])
            print(f"T={r.horizon}  satisfied {r.satisfaction_rate:6.3f}  "
                  f"nominal RF {r.nominal_rf_rate:6.3f}  prf RF {r.prf_rf_rate:6.3f}")


if __name__ == "__main__":
    main()
