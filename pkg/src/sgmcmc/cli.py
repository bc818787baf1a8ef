"""Command-line interface for the benchmark harness.

Subcommands: generate-data, stationary-order, rate-sweep, alpha-sweep,
grid-search, weak-order.  Exit codes: 0 success, 2 configuration error,
3 experiment unusable because every run diverged.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    AllDivergedError,
    ConfigError,
    ExperimentConfig,
    resolve_model,
    run_alpha_sweep,
    run_grid_search,
    run_rate_sweep,
    run_stationary_order,
    run_weak_order,
    write_csv,
)
from .models import DatasetMeta, generate_dataset, save_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_DIVERGED = 3


def _add_common(sub):
    sub.add_argument("--config", required=True, help="experiment config file (INI)")
    sub.add_argument("--out", help="output CSV path (overrides [experiment] out)")
    sub.add_argument("--seed", type=int, help="base seed (overrides [experiment] seed)")
    sub.add_argument("--runs", type=int, help="number of runs (overrides [experiment] runs)")
    sub.add_argument("--threads", type=int, help="worker threads (overrides [experiment] threads)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgmcmc",
        description="Stochastic-gradient MCMC convergence benchmark harness",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate-data", help="draw a dataset and persist it")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--mu", type=float, default=0.0)
    gen.add_argument("--sigma", type=float, default=1.0)

    for name in ("stationary-order", "rate-sweep", "alpha-sweep", "grid-search", "weak-order"):
        _add_common(subs.add_parser(name, help=f"run the {name} experiment"))
    return parser


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, kind=args.command)
    updates = {}
    if args.seed is not None:
        updates["base_seed"] = args.seed
    if args.runs is not None:
        if args.runs < 2:
            raise ConfigError("--runs must be >= 2")
        updates["n_runs"] = args.runs
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        updates["threads"] = args.threads
    if args.out is not None:
        updates["out"] = args.out
    if updates:
        cfg = replace(cfg, **updates)
    if cfg.out is None:
        raise ConfigError("no output path: set [experiment] out or pass --out")
    return cfg


def _all_unusable(rows) -> bool:
    estimated = [r for r in rows if r.bias is not None and math.isfinite(r.bias)]
    return len(estimated) == 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate-data":
            values = generate_dataset(args.seed, args.n, args.mu, args.sigma)
            save_dataset(args.out, values, DatasetMeta(args.seed, args.n, args.mu, args.sigma))
            print(f"wrote {args.n} observations to {args.out}")
            return EXIT_OK

        cfg = _load(args)
        out_path = Path(cfg.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        model, dataset_path = resolve_model(cfg, out_dir=out_path.parent)
        if dataset_path is not None:
            print(f"dataset: {dataset_path}")

        if args.command == "stationary-order":
            result = run_stationary_order(model, cfg)
            rows = result.rows
            for name, fit in result.slopes.items():
                if fit is None:
                    print(f"{name}: position-moment bias slope: not enough usable points")
                else:
                    print(f"{name}: position-moment bias slope {fit.slope:+.3f} (r^2={fit.r_squared:.4f})")
            for name, fit in result.kinetic_slopes.items():
                if fit is not None:
                    print(f"{name}: kinetic-moment bias slope {fit.slope:+.3f} (r^2={fit.r_squared:.4f})")
        elif args.command == "rate-sweep":
            result = run_rate_sweep(model, cfg)
            rows = result.rows
            for (name, metric), fit in sorted(result.slopes.items()):
                if fit is not None:
                    print(f"{name}: {metric} vs L slope {fit.slope:+.3f} (r^2={fit.r_squared:.4f})")
        elif args.command == "alpha-sweep":
            result = run_alpha_sweep(model, cfg)
            rows = result.rows
            for name, alpha in result.winners.items():
                print(f"{name}: best alpha at largest L: {alpha}")
        elif args.command == "grid-search":
            result = run_grid_search(model, cfg)
            rows = result.rows
            for name, (prefactor, d_val, score) in result.best.items():
                print(f"{name}: best prefactor {prefactor:.6g} D={d_val} ({cfg.target}={score:.6g})")
        elif args.command == "weak-order":
            result = run_weak_order(model, cfg)
            rows = result.rows
            for name, wo in result.results.items():
                slope = "n/a" if wo.slope is None else f"{wo.slope:+.3f}"
                print(f"{name}: local weak-error slope {slope}")
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command!r}")

        write_csv(rows, out_path)
        print(f"wrote {len(rows)} rows to {out_path}")
        if args.command != "weak-order" and _all_unusable(rows):
            print("error: every run diverged; no usable estimates", file=sys.stderr)
            return EXIT_ALL_DIVERGED
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_DIVERGED


def entry() -> None:  # console-script wrapper
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
