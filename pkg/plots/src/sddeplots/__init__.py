"""Convergence-figure companion for sddeint error tables."""

from .render import Curve, PlotDataError, PlotSpec, collect_curves, load_rows, render

__version__ = "0.1.0"
