"""``fmpkit <run|sweep|compare|convergence|validate> --config PATH``."""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigInvalid
from .experiment import load_config, run_experiment, validate_config, write_convergence, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fmpkit", description="Fractional matrix programming experiments.")
    p.add_argument("command", choices=("run", "sweep", "compare", "convergence", "validate"))
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigInvalid("seed", "must be >= 0")
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["out"] = args.out
        if args.jobs < 1:
            raise ConfigInvalid("jobs", "must be >= 1")
        if args.command == "compare":
            if cfg["kind"] not in ("maxmin_ee", "see_gee"):
                raise ConfigInvalid("kind", "compare needs maxmin_ee or see_gee")
            cfg["method"] = "both"
            cfg = validate_config(cfg)
    except ConfigInvalid as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"config ok: {args.config}")
        return EXIT_OK

    trend = args.command == "sweep"
    run = run_experiment(cfg, jobs=args.jobs, trend=trend)
    write_outputs(run, trend=trend)
    status = EXIT_OK
    if args.command == "convergence":
        verdict = write_convergence(run, cfg["kind"])
        bad = [k for k, v in verdict.items() if not v]
        print(f"self-check: {len(verdict) - len(bad)}/{len(verdict)} traces monotone")
        if bad:
            status = EXIT_PARTIAL
    for row in run.summary:
        print(f"P={float(row['P_dB']):g} dB  {row['method']:<10} mean objective {float(row['objective_mean']):.6g}"
              f"  ({row['n_ok']} ok, {row['n_failed']} failed)")
    if run.failures:
        print(f"{run.failures} run(s) failed; see results.csv", file=sys.stderr)
        status = EXIT_PARTIAL
    print(f"wrote {run.out_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())
