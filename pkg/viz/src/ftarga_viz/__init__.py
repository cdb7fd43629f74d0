"""Comparison plots for the training runner's grid CSV files."""

from .plotting import PlotJob, color_indices, load_grid_csv, render, render_figure, shared_scale

__all__ = [
    "PlotJob",
    "color_indices",
    "load_grid_csv",
    "render",
    "render_figure",
    "shared_scale",
]

__version__ = "0.1.0"
