"""Convergence figures from error-table CSVs.

Reads the CSV emitted by the solver's converge command and draws one
curve per scheme variant on log2(initial step) versus log10(MSE) axes,
optionally with order-1/2 and order-1 reference lines anchored at the
smallest-step refined-Milstein point.  Every number on the figure comes
from the CSV; nothing is recomputed here.
"""

import argparse
import csv
import math
import os
import sys
import warnings
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADER = [
    "scheme",
    "integral_mode",
    "delayed_value_mode",
    "h_initial",
    "obs_time",
    "mse",
    "n_ok",
    "n_failed",
    "seed",
]

LOG10_2 = math.log10(2.0)


class PlotDataError(ValueError):
    """Raised when the CSV is malformed or the selection is empty."""


@dataclass
class PlotSpec:
    csv_paths: list
    out_path: str
    obs_time: float = None
    ref_lines: bool = False
    indivisible: bool = False


@dataclass
class Curve:
    label: str
    log2_h: np.ndarray
    log10_mse: np.ndarray


def load_rows(paths):
    rows = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != EXPECTED_HEADER:
                raise PlotDataError(
                    f"{path}: unexpected columns {reader.fieldnames}; "
                    f"need {EXPECTED_HEADER}"
                )
            for rec in reader:
                rows.append({
                    "scheme": rec["scheme"],
                    "integral_mode": rec["integral_mode"],
                    "delayed_value_mode": rec["delayed_value_mode"],
                    "h_initial": float(rec["h_initial"]),
                    "obs_time": float(rec["obs_time"]),
                    "mse": float(rec["mse"]),
                })
    return rows


def variant_label(row):
    label = row["scheme"]
    if row["integral_mode"] not in ("", "none"):
        label += f"-{row['integral_mode']}"
    if row["delayed_value_mode"] == "linear_interpolation":
        label += " (LI)"
    return label


def collect_curves(rows, obs_time):
    if obs_time is not None:
        rows = [r for r in rows if abs(r["obs_time"] - obs_time) <= 1e-9]
    groups = {}
    for row in rows:
        if row["mse"] <= 0.0 or not math.isfinite(row["mse"]):
            continue
        groups.setdefault(variant_label(row), []).append(row)
    curves = []
    for label in sorted(groups):
        pts = sorted(groups[label], key=lambda r: r["h_initial"])
        curves.append(Curve(
            label=label,
            log2_h=np.array([math.log2(r["h_initial"]) for r in pts]),
            log10_mse=np.array([math.log10(r["mse"]) for r in pts]),
        ))
    return curves


def reference_anchor(curves):
    """Smallest-step refined-Milstein point, if present."""
    for curve in curves:
        if curve.label.startswith("milstein-trapezoidal"):
            idx = int(np.argmin(curve.log2_h))
            return curve.log2_h[idx], curve.log10_mse[idx]
    return None


def render(spec):
    """Draw the figure and save it; returns the matplotlib figure so tests
    can inspect the plotted data directly."""
    rows = load_rows(spec.csv_paths)
    curves = collect_curves(rows, spec.obs_time)
    if not curves:
        raise PlotDataError("no plottable rows after filtering")

    ref_lines = spec.ref_lines
    if ref_lines and spec.indivisible:
        warnings.warn(
            "reference slopes apply only to uniform-step studies; "
            "ignoring --ref-lines for the indivisible study",
            stacklevel=2,
        )
        ref_lines = False

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for curve in curves:
        ax.plot(curve.log2_h, curve.log10_mse, marker="o", label=curve.label)
    if ref_lines:
        anchor = reference_anchor(curves)
        if anchor is not None:
            x0, y0 = anchor
            span = np.array([
                min(c.log2_h.min() for c in curves),
                max(c.log2_h.max() for c in curves),
            ])
            for order, style in ((0.5, ":"), (1.0, "--")):
                ax.plot(
                    span,
                    y0 + order * LOG10_2 * (span - x0),
                    style,
                    color="gray",
                    label=f"order {order:g} reference",
                )
    ax.set_xlabel("log2(initial step size)")
    ax.set_ylabel("log10(MSE)")
    if spec.obs_time is not None:
        ax.set_title(f"errors at t = {spec.obs_time:g}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_raster_and_vector(fig, spec.out_path)
    return fig


def _save_raster_and_vector(fig, out_path):
    fig.savefig(out_path)
    base, ext = os.path.splitext(out_path)
    companion = ".svg" if ext.lower() != ".svg" else ".png"
    fig.savefig(base + companion)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sddeint-plot",
        description="Render a log2(h)-log10(MSE) convergence figure from "
                    "error-table CSVs",
    )
    parser.add_argument("csv", nargs="+", help="input error-table CSV file(s)")
    parser.add_argument("--obs-time", type=float, default=None,
                        help="keep only rows at this observation time")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--ref-lines", action="store_true",
                        help="draw order-1/2 and order-1 reference lines")
    parser.add_argument("--indivisible", action="store_true",
                        help="mark the study as indivisible (reference lines "
                             "are then meaningless and skipped)")
    args = parser.parse_args(argv)
    spec = PlotSpec(
        csv_paths=args.csv,
        out_path=args.out,
        obs_time=args.obs_time,
        ref_lines=args.ref_lines,
        indivisible=args.indivisible,
    )
    try:
        fig = render(spec)
    except (PlotDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    plt.close(fig)
    print(f"wrote {spec.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
