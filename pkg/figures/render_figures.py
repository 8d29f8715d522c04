#!/usr/bin/env python3
"""Render paper-style log-log convergence figures from a benchmark CSV.

Reads the harness CSV (header: method,h,eps,ntau,err_x,err_v,err_combined,
wall_seconds,status), groups successful rows into panels, and writes a PNG:

  sweep = h    error against step size, one panel per eps  (Fig. 1/3 layout)
  sweep = eps  error against stiffness, one panel per h    (Fig. 2/4 layout)

Each panel overlays one line per method on base-2 log axes with dashed
reference-slope guides.  Rows whose status is not "ok" are skipped with a
console note.

Usage:
  render_figures.py --csv study.csv --sweep h --out fig.png
  render_figures.py --csv study.csv --sweep eps --metric err_v --out fig.png
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

EXPECTED_COLUMNS = [
    "method",
    "h",
    "eps",
    "ntau",
    "err_x",
    "err_v",
    "err_combined",
    "wall_seconds",
    "status",
]

METRICS = ("err_x", "err_v", "err_combined")

LINE_STYLE = dict(marker="o", markersize=4, linewidth=1.3)
GUIDE_STYLE = dict(linestyle="--", linewidth=0.9, color="0.45")


@dataclass
class FigureSpec:
    """What to draw: source CSV, sweep axis, overlays, guides, destination."""

    csv_path: Path
    sweep: str  # "h" or "eps"; the panel variable is the other one
    out_path: Path
    metric: str = "err_x"
    methods: tuple[str, ...] | None = None
    guide_slopes: tuple[float, ...] = (1.0, 2.0, 4.0)
    dpi: int = 110

    def __post_init__(self):
        if self.sweep not in ("h", "eps"):
            raise ValueError(f"sweep must be 'h' or 'eps', got {self.sweep!r}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")

    @property
    def panel_var(self) -> str:
        return "eps" if self.sweep == "h" else "h"


def load_rows(csv_path: Path) -> list[dict]:
    """Parse the harness CSV; non-ok rows are dropped with a console note."""
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in EXPECTED_COLUMNS if c not in header]
        if missing:
            raise SystemExit(f"error: {csv_path} is missing columns {missing}")
        rows, skipped = [], 0
        for raw in reader:
            if raw["status"] != "ok":
                skipped += 1
                continue
            rows.append(
                {
                    "method": raw["method"],
                    "h": float(raw["h"]),
                    "eps": float(raw["eps"]),
                    "err_x": float(raw["err_x"]),
                    "err_v": float(raw["err_v"]),
                    "err_combined": float(raw["err_combined"]),
                }
            )
    if skipped:
        print(f"note: skipped {skipped} row(s) with error status")
    return rows


def _panel_grid(n_panels: int) -> tuple[int, int]:
    ncols = min(3, max(1, n_panels))
    nrows = math.ceil(n_panels / ncols)
    return nrows, ncols


def _format_pow2(value: float) -> str:
    k = math.log2(value)
    if abs(k - round(k)) < 1e-9:
        return f"2^{round(k)}"
    return f"{value:g}"


def build_figure(spec: FigureSpec, rows: list[dict]):
    """Assemble the panel grid; returns (figure, axes list) for inspection."""
    if not rows:
        raise SystemExit("error: no successful rows to plot")
    methods = spec.methods or tuple(dict.fromkeys(r["method"] for r in rows))
    panel_values = sorted({r[spec.panel_var] for r in rows}, reverse=True)
    nrows, ncols = _panel_grid(len(panel_values))
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(3.4 * ncols, 2.9 * nrows), squeeze=False, constrained_layout=True
    )
    flat_axes = [ax for row in axes for ax in row]
    for ax in flat_axes[len(panel_values):]:
        ax.set_visible(False)

    for ax, pval in zip(flat_axes, panel_values):
        drew_guides = False
        for method in methods:
            pts = sorted(
                ((r[spec.sweep], r[spec.metric]) for r in rows if r["method"] == method and r[spec.panel_var] == pval),
            )
            pts = [(x, y) for x, y in pts if y > 0.0]
            if not pts:
                continue
            lx = [math.log2(x) for x, _ in pts]
            ly = [math.log2(y) for _, y in pts]
            ax.plot(lx, ly, label=method, **LINE_STYLE)
            if not drew_guides:
                _draw_guides(ax, lx, ly, spec.guide_slopes)
                drew_guides = True
        ax.set_title(f"{spec.panel_var} = {_format_pow2(pval)}", fontsize=9)
        ax.set_xlabel(f"log2({spec.sweep})", fontsize=8)
        ax.set_ylabel(f"log2({spec.metric})", fontsize=8)
        ax.tick_params(labelsize=7)
        ax.grid(True, linewidth=0.3, alpha=0.5)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=6, loc="best")
    return fig, flat_axes[: len(panel_values)]


def _draw_guides(ax, lx, ly, slopes) -> None:
    # Anchor the slope guides at the largest-x data point, slightly offset.
    x0, y0 = max(zip(lx, ly))
    x_min = min(lx)
    for s in slopes:
        ax.plot(
            [x_min, x0],
            [y0 - 0.6 + s * (x_min - x0), y0 - 0.6],
            label=f"slope {s:g}",
            **GUIDE_STYLE,
        )


def render(spec: FigureSpec) -> Path:
    """Render the figure to spec.out_path and return the path."""
    rows = load_rows(spec.csv_path)
    fig, _ = build_figure(spec, rows)
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, dpi=spec.dpi, metadata={"Software": "render_figures"})
    plt.close(fig)
    return spec.out_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--csv", required=True, type=Path, help="benchmark CSV produced by the harness")
    parser.add_argument("--sweep", required=True, choices=("h", "eps"), help="x-axis variable")
    parser.add_argument("--out", required=True, type=Path, help="output image path (.png)")
    parser.add_argument("--metric", default="err_x", choices=METRICS)
    parser.add_argument("--methods", help="comma-separated subset/order of methods to overlay")
    parser.add_argument("--slopes", default="1,2,4", help="comma-separated guide-line slopes")
    parser.add_argument("--dpi", type=int, default=110)
    args = parser.parse_args(argv)
    methods = tuple(m.strip() for m in args.methods.split(",")) if args.methods else None
    slopes = tuple(float(s) for s in args.slopes.split(",") if s.strip())
    spec = FigureSpec(
        csv_path=args.csv,
        sweep=args.sweep,
        out_path=args.out,
        metric=args.metric,
        methods=methods,
        guide_slopes=slopes,
        dpi=args.dpi,
    )
    out = render(spec)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
