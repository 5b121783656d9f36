"""Objective against iteration for one problem kind, with a monotonicity check.

Writes ``iteration,objective`` rows for each seed on stdout and reports on
stderr whether every trace moved in the right direction.
"""
import argparse
import csv
import sys

from fmpkit.channel_sim import Dimensions, draw_channels, to_state
from fmpkit.fbl_metrics import SystemParams
from fmpkit.problems import KINDS, solve_kind


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", default="maxmin_ee", choices=KINDS)
    ap.add_argument("--dims", type=int, nargs=3, default=(2, 5, 5), metavar=("K", "N_BS", "N_U"))
    ap.add_argument("--channel", default="simulated", choices=("simulated", "iid"))
    ap.add_argument("--P-dB", type=float, default=10.0)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--max-iter", type=int, default=200)
    args = ap.parse_args()

    params = SystemParams(P=10 ** (args.P_dB / 10))
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["seed", "iteration", "objective"])
    monotone = []
    for seed in range(args.seeds):
        ch = draw_channels(args.channel, Dimensions(*args.dims, 0), seed)
        res, trace, prob = solve_kind(args.kind, to_state(ch), params, max_iter=args.max_iter)
        for i, obj in enumerate(trace.objectives):
            out.writerow([seed, i, f"{obj:.10g}"])
        monotone.append(trace.is_monotone(prob.maximize))
    print(f"{sum(monotone)}/{len(monotone)} traces monotone", file=sys.stderr)


if __name__ == "__main__":
    main()
