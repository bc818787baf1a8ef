#!/usr/bin/env python3
"""Render benchmark figures from harness CSV files.

Three figure kinds are supported, matching the harness experiments:

  stationary-order   bias versus step size h, one series per integrator
  alpha-sweep        bias (or MSE) versus L, one series per decay exponent,
                     with the theoretically optimal exponent emphasised
  method-compare     bias (or MSE) versus L, one series per integrator

The script only displays CSV columns; it never recomputes statistics, so the
harness stays the single source of numerical truth.  Grid points whose runs
all (or mostly) diverged are drawn as distinct markers pinned to the plot
ceiling instead of being dropped silently.

Usage: plot.py --csv results.csv --kind stationary-order --out figure.png
Exit codes mirror the harness: 0 ok, 2 bad arguments/schema, 3 empty series.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_EMPTY = 3

KINDS = ("stationary-order", "alpha-sweep", "method-compare")

# columns each figure kind actually reads; checked before rendering
REQUIRED_COLUMNS = {
    "stationary-order": {"experiment", "integrator", "h", "bias", "mse", "n_runs", "n_diverged"},
    "alpha-sweep": {"experiment", "integrator", "alpha", "L", "bias", "mse", "n_runs", "n_diverged"},
    "method-compare": {"experiment", "integrator", "L", "bias", "mse", "n_runs", "n_diverged"},
}

# experiment tag expected in the CSV rows for each figure kind
ROW_FILTER = {
    "stationary-order": "stationary-order",
    "alpha-sweep": "alpha-sweep",
    "method-compare": "rate-sweep",
}

# local weak order by integrator name; fixes the optimal decay exponent
# emphasised in alpha-sweep figures
INTEGRATOR_ORDER = {"sghmc-aboba": 2}


@dataclass(frozen=True)
class PlotSpec:
    csv_path: Path
    kind: str
    out_path: Path
    metric: str = "bias"
    loglog: bool = True


class PlotError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _parse_float(text: str):
    if text is None or text == "":
        return None
    return float(text)


def read_rows(spec: PlotSpec) -> list[dict]:
    if not spec.csv_path.exists():
        raise PlotError(f"csv not found: {spec.csv_path}", EXIT_BAD_INPUT)
    with open(spec.csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or ())
        missing = REQUIRED_COLUMNS[spec.kind] - header
        if missing:
            raise PlotError(
                f"missing columns for {spec.kind}: {', '.join(sorted(missing))}",
                EXIT_BAD_INPUT,
            )
        rows = [row for row in reader if row.get("experiment") == ROW_FILTER[spec.kind]]
    if not rows:
        raise PlotError("empty series: no matching rows in the CSV", EXIT_EMPTY)
    return rows


def _is_diverged(row: dict, metric: str) -> bool:
    value = _parse_float(row[metric])
    n_runs = int(row["n_runs"] or 0)
    n_div = int(row["n_diverged"] or 0)
    return value is None or value != value or (n_runs > 0 and 2 * n_div > n_runs)


def build_series(spec: PlotSpec, rows: list[dict]):
    """Group rows into {series label: (xs, ys)} plus diverged x positions."""
    if spec.kind == "stationary-order":
        x_col, key = "h", lambda r: r["integrator"]
    elif spec.kind == "alpha-sweep":
        x_col, key = "L", lambda r: f"alpha={float(r['alpha']):.4g}"
    else:
        x_col, key = "L", lambda r: r["integrator"]

    series: dict[str, list[tuple[float, float]]] = {}
    diverged: list[tuple[str, float]] = []
    for row in rows:
        x = _parse_float(row[x_col])
        if x is None:
            continue
        label = key(row)
        if _is_diverged(row, spec.metric):
            diverged.append((label, x))
            continue
        series.setdefault(label, []).append((x, _parse_float(row[spec.metric])))
    series = {k: sorted(v) for k, v in series.items() if v}
    if not series:
        raise PlotError("empty series: every point is missing or diverged", EXIT_EMPTY)
    return series, diverged


def _optimal_alpha_label(spec: PlotSpec, rows: list[dict]) -> str | None:
    if spec.kind != "alpha-sweep":
        return None
    integrators = {row["integrator"] for row in rows}
    order = INTEGRATOR_ORDER.get(sorted(integrators)[0], 1)
    optimum = 1.0 / (order + 1) if spec.metric == "bias" else 1.0 / (2 * order + 1)
    alphas = sorted({float(row["alpha"]) for row in rows if row["alpha"]})
    if not alphas:
        return None
    closest = min(alphas, key=lambda a: abs(a - optimum))
    return f"alpha={closest:.4g}"


METRIC_AXIS = {"bias": "|bias|", "mse": "MSE"}
X_AXIS = {"stationary-order": "step size h", "alpha-sweep": "iterations L", "method-compare": "iterations L"}


def render(spec: PlotSpec) -> tuple[int, int]:
    rows = read_rows(spec)
    series, diverged = build_series(spec, rows)
    highlight = _optimal_alpha_label(spec, rows)

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for label in sorted(series):
        xs = [p[0] for p in series[label]]
        ys = [p[1] for p in series[label]]
        if label == highlight:
            ax.plot(xs, ys, "o-", color="red", linewidth=3.0, zorder=5,
                    label=f"{label} (optimal rate)")
        else:
            ax.plot(xs, ys, "o-", linewidth=1.2, label=label)

    if diverged:
        finite_max = max(max(p[1] for p in pts) for pts in series.values())
        ceiling = finite_max * (3.0 if spec.loglog else 1.2)
        ax.scatter(
            [x for _, x in diverged], [ceiling] * len(diverged),
            marker="x", s=70, color="crimson", zorder=6, label="diverged",
        )

    if spec.loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(X_AXIS[spec.kind])
    ax.set_ylabel(METRIC_AXIS[spec.metric])
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path)
    plt.close(fig)
    return len(series), len(diverged)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--csv", required=True, type=Path)
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--metric", choices=("bias", "mse"), default="bias")
    parser.add_argument("--linear", action="store_true", help="disable log-log axes")
    args = parser.parse_args(argv)
    spec = PlotSpec(
        csv_path=args.csv, kind=args.kind, out_path=args.out,
        metric=args.metric, loglog=not args.linear,
    )
    try:
        n_series, n_diverged = render(spec)
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"plotted {n_series} series, {n_diverged} diverged markers -> {spec.out_path}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
