"""Framework against the GDA and Dinkelbach baselines on paired channels.

Prints mean final objectives and mean beamformer-update counts for max-min EE
and GEE.  Defaults follow the two-user, 5x5-antenna setting at P = 10 dB.
"""
import argparse

import numpy as np

from fmpkit.fbl_metrics import SystemParams
from fmpkit.problems import compare_methods


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--P-dB", type=float, default=10.0)
    ap.add_argument("--dims", type=int, nargs=3, default=(2, 5, 5), metavar=("K", "N_BS", "N_U"))
    args = ap.parse_args()

    params = SystemParams(P=10 ** (args.P_dB / 10))
    report = compare_methods(["maxmin_ee", "gee"], args.trials, args.seed, params=params, dims=tuple(args.dims))
    print(f"{'objective':<10} {'method':<11} {'mean final':>12} {'mean updates':>13}")
    for (kind, method), finals in report.finals.items():
        updates = report.updates[(kind, method)]
        print(f"{kind:<10} {method:<11} {np.mean(finals):>12.6g} {np.mean(updates):>13.1f}")


if __name__ == "__main__":
    main()
