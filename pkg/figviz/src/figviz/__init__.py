"""Scatter-figure rendering for ipae experiment artifacts."""

__version__ = "0.1.0"

from .render import ColumnError, FigureSpec, grid_shape, render, render_grid
