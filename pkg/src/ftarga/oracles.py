"""Validation oracles: Monte Carlo hitting times, closed forms, grid export.

The oracles never share code with the training path; they exist to check it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .chains import ChainModel, StepCapExceeded
from .neural import MlpParams, forward_many


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    stderr: float
    n: int


def hitting_times(chain: ChainModel, x, in_target, n: int,
                  rng: np.random.Generator, step_cap: int = 10 ** 7,
                  threads: int = 1) -> np.ndarray:
    """Raw hitting step counts for n independent replications.

    The hitting index is the first step count (0 included) at which the
    state lies in the target set, so a start inside the target returns all
    zeros. Each replication owns a child generator spawned from ``rng`` and
    results are collected in replication order, so the output is identical
    for any thread count.
    """
    x0 = np.asarray(x, dtype=np.float64)
    if in_target(x0):
        return np.zeros(n)
    children = rng.spawn(n)
    out = np.empty(n)

    def run(i: int) -> None:
        child = children[i]
        cur = x0
        steps = 0
        while not in_target(cur):
            if steps >= step_cap:
                raise StepCapExceeded(
                    f"no hit within {step_cap} steps from {x0.tolist()}")
            cur = chain.step(cur, child)
            steps += 1
        out[i] = steps

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(n)))
    else:
        for i in range(n):
            run(i)
    return out


def mc_hitting_time(chain: ChainModel, x, in_target, n: int,
                    rng: np.random.Generator, step_cap: int = 10 ** 7,
                    threads: int = 1) -> OracleEstimate:
    """Monte Carlo estimate of the expected hitting time of the target set."""
    times = hitting_times(chain, x, in_target, n, rng, step_cap, threads)
    stderr = float(times.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return OracleEstimate(float(times.mean()), stderr, n)


def poisson_exact_bernoulli(kind: str, x):
    """Closed-form centered value function of the Bernoulli convolution.

    ``linear`` reward: 2x. ``quadratic`` reward: (4/3)x^2 + (2/3)x. Both are
    solutions of the centered balance equation up to an additive constant.
    Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "linear":
        val = 2.0 * x
    elif kind == "quadratic":
        val = (4.0 / 3.0) * x ** 2 + (2.0 / 3.0) * x
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return float(val) if val.ndim == 0 else val


def gibbs_exact_density(x):
    """Normalized stationary density of the Gibbs sweep chain, Lebesgue
    reference: (9/200)(2-x1^2)(2-x2^2)(2+x1*x2) on the square [-1,1]^2.

    Accepts one point (2,) or a batch (n,2).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    x1, x2 = pts[:, 0], pts[:, 1]
    val = 0.045 * (2.0 - x1 ** 2) * (2.0 - x2 ** 2) * (2.0 + x1 * x2)
    return float(val[0]) if single else val


# ---------------------------------------------------------------------------
# Grid evaluation and CSV export

@dataclass(frozen=True)
class GridSpec:
    """Per-axis (lo, hi, spacing); endpoints inclusive."""

    axes: tuple

    def axis_values(self, i: int) -> np.ndarray:
        lo, hi, spacing = self.axes[i]
        count = int(round((hi - lo) / spacing))
        # decimal spacings drift in binary; round so boundary predicates hold
        return np.round(lo + spacing * np.arange(count + 1), 10)

    @property
    def dim(self) -> int:
        return len(self.axes)


def grid_points(spec: GridSpec) -> np.ndarray:
    """All lattice points, lexicographic (first axis slowest), shape (N, d)."""
    axes = [spec.axis_values(i) for i in range(spec.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, spec.dim)


def grid_eval(fn, spec: GridSpec, region=None):
    """Evaluate a network or plain function on the (filtered) lattice.

    Returns (points (N, d), values (N,)) in deterministic lattice order;
    ``region`` is an optional keep-predicate on points.
    """
    pts = grid_points(spec)
    if region is not None:
        keep = np.fromiter((bool(region(p)) for p in pts), dtype=bool,
                           count=len(pts))
        pts = pts[keep]
    if isinstance(fn, MlpParams):
        values = forward_many(fn, pts)
    else:
        values = np.array([float(fn(p)) for p in pts])
    return pts, values


def write_grid_csv(path, pts: np.ndarray, values: np.ndarray,
                   stderr: np.ndarray | None = None) -> None:
    """Write ``x1[,x2,...],value[,stderr]`` rows, ten significant digits."""
    pts = np.asarray(pts, dtype=np.float64)
    dim = pts.shape[1]
    cols = [f"x{i + 1}" for i in range(dim)] + ["value"]
    if stderr is not None:
        cols.append("stderr")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(len(pts)):
            row = [f"{c:.10g}" for c in pts[i]] + [f"{values[i]:.10g}"]
            if stderr is not None:
                row.append(f"{stderr[i]:.10g}")
            fh.write(",".join(row) + "\n")
