"""Render paired learned/oracle grid CSVs as comparison figures.

The input format is the training runner's grid CSV: header ``x1,value``,
``x1,value,stderr``, ``x1,x2,value`` or ``x1,x2,value,stderr``, one grid
point per row. One-column grids render as overlaid curves, two-column grids
as side-by-side heatmaps sharing one color scale. Grid cells absent from a
CSV (points excluded from the evaluation region) are left blank.

Rendering is a pure function of the two CSVs and the job: fixed layout,
fixed colormap, no timestamps, so identical inputs give identical images.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import pyplot as plt

KINDS = ("heatmap-pair", "curve-pair")

_HEADERS = {
    ("x1", "value"): (1, False),
    ("x1", "value", "stderr"): (1, True),
    ("x1", "x2", "value"): (2, False),
    ("x1", "x2", "value", "stderr"): (2, True),
}


@dataclass
class PlotJob:
    """One rendering task: two grid CSVs in, one raster image out."""

    learned_csv: str
    oracle_csv: str
    kind: str
    out_path: str
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")


@dataclass
class GridData:
    """Parsed grid CSV: points (n, dim), values (n,), optional stderr (n,)."""

    points: np.ndarray
    values: np.ndarray
    stderr: Optional[np.ndarray]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def load_grid_csv(path) -> GridData:
    """Parse a grid CSV, rejecting anything off-schema with a clear message."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header not in _HEADERS:
            raise ValueError(
                f"{path}: unsupported header {','.join(header)!r}; "
                "expected x1[,x2],value[,stderr]")
        dim, has_err = _HEADERS[header]
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ValueError(
                    f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-numeric field in {row!r}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    return GridData(points=data[:, :dim], values=data[:, dim],
                    stderr=data[:, dim + 1] if has_err else None)


def dense_grid(points: np.ndarray, values: np.ndarray):
    """Scattered (x1, x2) rows to a rectangular array, NaN where absent.

    Returns (x1 axis, x2 axis, grid) with grid[i2, i1] the value at
    (x1[i1], x2[i2]), ready for pcolormesh.
    """
    x1 = np.unique(points[:, 0])
    x2 = np.unique(points[:, 1])
    grid = np.full((x2.size, x1.size), np.nan)
    i1 = np.searchsorted(x1, points[:, 0])
    i2 = np.searchsorted(x2, points[:, 1])
    grid[i2, i1] = values
    return x1, x2, grid


def shared_scale(*arrays) -> tuple[float, float]:
    """Color range covering every finite value of every input array."""
    lo = min(float(np.nanmin(a)) for a in arrays)
    hi = max(float(np.nanmax(a)) for a in arrays)
    if not np.isfinite(lo) or not np.isfinite(hi):
        return 0.0, 1.0
    if lo == hi:
        return lo - 0.5, hi + 0.5
    return lo, hi


def color_indices(grid, vmin: float, vmax: float, levels: int = 256) -> np.ndarray:
    """Integer colormap bin per cell under a fixed scale, -1 where blank."""
    a = np.asarray(grid, dtype=np.float64)
    out = np.full(a.shape, -1, dtype=np.int64)
    ok = np.isfinite(a)
    span = vmax - vmin
    if span <= 0:
        out[ok] = 0
        return out
    scaled = np.clip((a[ok] - vmin) / span, 0.0, 1.0)
    out[ok] = np.rint(scaled * (levels - 1)).astype(np.int64)
    return out


def _require_aligned(learned: GridData, oracle: GridData, job: PlotJob) -> None:
    if learned.dim != oracle.dim:
        raise ValueError(
            f"{job.learned_csv} is {learned.dim}-d but {job.oracle_csv} "
            f"is {oracle.dim}-d")
    if learned.points.shape != oracle.points.shape or not np.array_equal(
            learned.points, oracle.points):
        raise ValueError(
            f"grids do not align: {job.learned_csv} and {job.oracle_csv} "
            "list different points")


# panel boxes in figure fractions, chosen to land on whole pixels at the
# fixed canvas size so the two heatmap panels rasterize identically
_PANEL_L = (0.08, 0.15, 0.36, 0.75)
_PANEL_R = (0.50, 0.15, 0.36, 0.75)
_PANEL_CBAR = (0.90, 0.15, 0.02, 0.75)


def render_figure(job: PlotJob):
    """Build the figure for a job; the caller owns saving/closing it."""
    learned = load_grid_csv(job.learned_csv)
    oracle = load_grid_csv(job.oracle_csv)
    _require_aligned(learned, oracle, job)

    if job.kind == "curve-pair":
        if learned.dim != 1:
            raise ValueError(
                f"curve-pair needs 1-d grids, these are {learned.dim}-d")
        fig = plt.figure(figsize=(6.4, 4.8), dpi=100)
        ax = fig.add_axes((0.12, 0.12, 0.83, 0.8))
        order = np.argsort(learned.points[:, 0])
        x = learned.points[order, 0]
        ax.plot(x, learned.values[order], color="#1f77b4", lw=1.8,
                label="learned")
        ax.plot(x, oracle.values[order], color="#d62728", lw=1.8, ls="--",
                label="oracle")
        ax.set_xlabel(job.xlabel or "x1")
        ax.set_ylabel(job.ylabel or "value")
        ax.legend(frameon=False)
        return fig

    if learned.dim != 2:
        raise ValueError(
            f"heatmap-pair needs 2-d grids, these are {learned.dim}-d")
    x1, x2, grid_l = dense_grid(learned.points, learned.values)
    _, _, grid_o = dense_grid(oracle.points, oracle.values)
    vmin, vmax = shared_scale(grid_l, grid_o)

    fig = plt.figure(figsize=(10.0, 4.0), dpi=100)
    axes = [fig.add_axes(_PANEL_L), fig.add_axes(_PANEL_R)]
    mesh = None
    # no aspect lock: it would nudge the axes boxes off whole pixels and the
    # two panels would no longer rasterize as exact translates
    for ax, grid, title in zip(axes, (grid_l, grid_o), ("learned", "oracle")):
        mesh = ax.pcolormesh(x1, x2, np.ma.masked_invalid(grid),
                             cmap="viridis", vmin=vmin, vmax=vmax,
                             shading="nearest", antialiased=False)
        ax.set_title(title)
        ax.set_xlabel(job.xlabel or "x1")
    axes[0].set_ylabel(job.ylabel or "x2")
    axes[1].set_yticklabels([])
    fig.colorbar(mesh, cax=fig.add_axes(_PANEL_CBAR))
    return fig


def render(job: PlotJob) -> str:
    """Render the job and write the image; returns the output path."""
    fig = render_figure(job)
    try:
        fig.savefig(job.out_path, dpi=100,
                    metadata={"Software": "ftarga-viz"})
    finally:
        plt.close(fig)
    return job.out_path
