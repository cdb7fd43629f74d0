"""Markov-chain models, region predicates, and path-sampling primitives.

Four chains ship here: a two-station stochastic fluid network with finite
buffers, a two-server FIFO workload recursion, the Bernoulli convolution on
[0,1], and a fixed-scan Gibbs sampler on the square [-1,1]^2. All states are
float64 numpy vectors. Every sampler takes an explicit numpy Generator and
consumes draws in a fixed, documented order, so runs are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

State = np.ndarray


class StepCapExceeded(RuntimeError):
    """A path failed to reach its stopping set within the step cap."""


class SamplerStuck(RuntimeError):
    """A rejection sampler exhausted its attempt cap."""


# ---------------------------------------------------------------------------
# Regions and chain models

@dataclass(frozen=True)
class RegionSpec:
    """Target set, continuation set, optional training window, and a sampler.

    ``in_target`` is the absorbing set the hitting time refers to;
    ``in_continuation`` is its complement inside the state space;
    ``in_window`` (optional) is the subregion training concentrates on.
    Fresh training states are drawn uniformly from ``sample_box`` with
    rejection against ``sample_accept``.
    """

    in_target: Callable[[State], bool]
    in_continuation: Callable[[State], bool]
    sample_box: tuple[np.ndarray, np.ndarray]
    sample_accept: Optional[Callable[[State], bool]] = None
    in_window: Optional[Callable[[State], bool]] = None


def sample_nu(regions: RegionSpec, rng: np.random.Generator,
              attempt_cap: int = 10 ** 6) -> State:
    """Uniform draw from the region's box, rejecting until the predicate holds.

    Consumes one length-d uniform draw per attempt.
    """
    lo, hi = regions.sample_box
    accept = regions.sample_accept
    for _ in range(attempt_cap):
        x = rng.uniform(lo, hi)
        if accept is None or accept(x):
            return x
    raise SamplerStuck(f"no accepted draw in {attempt_cap} attempts")


@dataclass(frozen=True)
class ChainModel:
    """One-step sampler plus the per-state reward and discount rate.

    ``density_eta``, when present, is the transition density with respect to
    the reference probability measure eta sampled by ``eta_sample``.
    """

    dim: int
    step: Callable[[State, np.random.Generator], State]
    reward: Callable[[State], float]
    discount: Callable[[State], float]
    density_eta: Optional[Callable[[State, State], float]] = None
    eta_sample: Optional[Callable[[np.random.Generator], State]] = None
    name: str = ""


def sample_first_transition(chain: ChainModel, x, rng: np.random.Generator) -> State:
    """One draw of the next state from the current one."""
    return chain.step(np.asarray(x, dtype=np.float64), rng)


@dataclass(frozen=True)
class PathSegment:
    """Discounted reward and survival weight of a path run to its stopping set.

    ``reward`` accumulates discounted per-state rewards over the states
    visited before stopping, ``weight`` is the discount product times the
    indicator that the path stopped in the window rather than the target set,
    ``steps`` is the stopping step count, ``terminal`` the stopping state.
    """

    reward: float
    weight: float
    steps: int
    terminal: State


def simulate_segment(chain: ChainModel, x, regions: RegionSpec,
                     rng: np.random.Generator, step_cap: int = 10 ** 6) -> PathSegment:
    """Run the chain until it first re-enters the window or hits the target set.

    The stopping index is the first n >= 1 with X_n in (window or target).
    Rewards accrue at X_0 .. X_{stop-1}, each weighted by the discount
    product over the states before it. With zero discount and unit reward
    this degenerates to: reward = stop count, weight = 1{stopped in window}.
    """
    if regions.in_window is None:
        raise ValueError("simulate_segment needs a RegionSpec with a window")
    cur = np.asarray(x, dtype=np.float64)
    total = 0.0
    disc = 1.0
    for n in range(1, step_cap + 1):
        total += disc * chain.reward(cur)
        disc *= math.exp(-chain.discount(cur))
        cur = chain.step(cur, rng)
        if regions.in_target(cur):
            return PathSegment(total, 0.0, n, cur)
        if regions.in_window(cur):
            return PathSegment(total, disc, n, cur)
    raise StepCapExceeded(f"no return to window/target within {step_cap} steps")


# ---------------------------------------------------------------------------
# Two-station fluid network with finite buffers

FLUID_CAP = 5.0
FLUID_ROUTING = 0.4          # fraction of station-1 output fed to station 2
FLUID_T_HIGH = 2.0           # interarrival ~ U[0, 2]
FLUID_Z1_HIGH = 1.0          # station-1 arrival ~ U[0, 1]
FLUID_Z2_HIGH = 1.2          # station-2 arrival ~ U[0, 1.2]


def check_fluid_stability() -> None:
    """Mean inflow must undercut unit service capacity at both stations."""
    mean_t = FLUID_T_HIGH / 2.0
    mean_z1 = FLUID_Z1_HIGH / 2.0
    mean_z2 = FLUID_Z2_HIGH / 2.0
    if not mean_z1 < 1.0 * mean_t:
        raise RuntimeError("station 1 unstable: mean arrival >= service capacity")
    if not FLUID_ROUTING * mean_z1 + mean_z2 < 1.0 * mean_t:
        raise RuntimeError("station 2 unstable: mean inflow >= service capacity")


def fluid_apply(x, t: float, z1: float, z2: float) -> State:
    """Deterministic drain-then-arrive update over one interarrival interval.

    Both stations serve at rate 1. While station 1 is busy (a period of
    length min(x1, t)) station 2 receives routed flow at rate 0.4, so its
    net rate is -0.6, floored at zero; afterwards it drains at rate 1.
    Arrivals are then added and each buffer capped at 5; overflow is lost.
    """
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = float(x[0]), float(x[1])
    busy = min(x1, t)
    x2 = max(x2 - (1.0 - FLUID_ROUTING) * busy, 0.0)
    x2 = max(x2 - (t - busy), 0.0)
    x1 = max(x1 - t, 0.0)
    return np.array([min(x1 + z1, FLUID_CAP), min(x2 + z2, FLUID_CAP)])


def _fluid_step(x: State, rng: np.random.Generator) -> State:
    # draw order: interarrival, station-1 arrival, station-2 arrival
    t = rng.uniform(0.0, FLUID_T_HIGH)
    z1 = rng.uniform(0.0, FLUID_Z1_HIGH)
    z2 = rng.uniform(0.0, FLUID_Z2_HIGH)
    return fluid_apply(x, t, z1, z2)


def fluid_hitting() -> tuple[ChainModel, RegionSpec]:
    """Fluid network plus regions for the expected-hitting-time problem.

    Target set: both buffers at most 1. Reward is the indicator of the
    continuation set, so the value function is the expected hitting time.
    """
    check_fluid_stability()

    def in_target(x) -> bool:
        return 0.0 <= x[0] <= 1.0 and 0.0 <= x[1] <= 1.0

    def in_continuation(x) -> bool:
        return (0.0 <= x[0] <= FLUID_CAP and 0.0 <= x[1] <= FLUID_CAP
                and not in_target(x))

    regions = RegionSpec(
        in_target=in_target,
        in_continuation=in_continuation,
        sample_box=(np.zeros(2), np.full(2, FLUID_CAP)),
        sample_accept=in_continuation,
    )
    chain = ChainModel(
        dim=2,
        step=_fluid_step,
        reward=lambda x: 1.0 if in_continuation(x) else 0.0,
        discount=lambda x: 0.0,
        name="fluid",
    )
    return chain, regions


# ---------------------------------------------------------------------------
# Two-server FIFO workload recursion (ordered workload pair)

GG2_A_HIGH = 2.0 / 0.6       # interarrival ~ U[0, 2/0.6], rate 0.6
GG2_S_HIGH = 2.0 / 0.5       # service ~ U[0, 2/0.5], rate 0.5
GG2_TARGET_MAX = 3.0         # target set: both workloads at most 3
GG2_WINDOW_MAX = 9.0         # training window: 3 <= min <= max <= 9


def kw_apply(w, a: float, s: float) -> State:
    """Ordered two-server workload update: the arriving job joins the
    server that frees up first; both age by the interarrival time."""
    w = np.asarray(w, dtype=np.float64)
    v1 = max(float(w[0]) - a, 0.0) + s
    v2 = max(float(w[1]) - a, 0.0)
    return np.array([v1, v2]) if v1 <= v2 else np.array([v2, v1])


def _gg2_step(x: State, rng: np.random.Generator) -> State:
    # draw order: interarrival, service
    a = rng.uniform(0.0, GG2_A_HIGH)
    s = rng.uniform(0.0, GG2_S_HIGH)
    return kw_apply(x, a, s)


def gg2_hitting() -> tuple[ChainModel, RegionSpec]:
    """Two-server workload chain plus regions for hitting the low-load set.

    The state space is unbounded, so training draws from and validates on a
    bounded window above the target set.
    """

    def in_target(x) -> bool:
        return 0.0 <= x[0] <= x[1] <= GG2_TARGET_MAX

    def in_continuation(x) -> bool:
        return 0.0 <= x[0] <= x[1] and not in_target(x)

    def in_window(x) -> bool:
        return (GG2_TARGET_MAX <= x[0] <= x[1] <= GG2_WINDOW_MAX
                and not in_target(x))

    regions = RegionSpec(
        in_target=in_target,
        in_continuation=in_continuation,
        sample_box=(np.full(2, GG2_TARGET_MAX), np.full(2, GG2_WINDOW_MAX)),
        sample_accept=in_window,
        in_window=in_window,
    )
    chain = ChainModel(
        dim=2,
        step=_gg2_step,
        reward=lambda x: 1.0 if in_continuation(x) else 0.0,
        discount=lambda x: 0.0,
        name="gg2",
    )
    return chain, regions


# ---------------------------------------------------------------------------
# Bernoulli convolution on [0,1]

def bernoulli_step(x: float, z: int) -> float:
    """Halve the state and shift by half on a one-bit."""
    return (x + z) / 2.0


def _bernoulli_chain_step(x: State, rng: np.random.Generator) -> State:
    # draw order: one fair bit
    z = int(rng.integers(0, 2))
    return np.array([bernoulli_step(float(x[0]), z)])


def bernoulli_nu(rng: np.random.Generator) -> State:
    return rng.uniform(0.0, 1.0, size=1)


def bernoulli_chain(kind: str = "linear") -> ChainModel:
    """Bernoulli convolution with the identity or squared per-state reward."""
    if kind == "linear":
        reward = lambda x: float(x[0])
    elif kind == "quadratic":
        reward = lambda x: float(x[0]) ** 2
    else:
        raise ValueError(f"unknown reward kind {kind!r}")
    return ChainModel(
        dim=1,
        step=_bernoulli_chain_step,
        reward=reward,
        discount=lambda x: 0.0,
        name=f"bernoulli-{kind}",
    )


# ---------------------------------------------------------------------------
# Fixed-scan Gibbs sampler on [-1,1]^2

GIBBS_CONDITIONAL_BOUND = 0.9    # (3/20) * 2 * 3 bounds both conditionals


def gibbs_conditional_density(y: float, given: float) -> float:
    """Density of one coordinate given the other: (3/20)(2-y^2)(2+y*given)."""
    return 0.15 * (2.0 - y * y) * (2.0 + y * given)


def _sample_conditional(given: float, rng: np.random.Generator,
                        attempt_cap: int = 10 ** 6) -> float:
    """Rejection sampler for the conditional; uniform proposal on [-1,1].

    Consumes two uniforms per attempt (proposal, acceptance). The density is
    bounded by 0.9, so each attempt accepts with probability >= 1/1.8.
    """
    for _ in range(attempt_cap):
        y = rng.uniform(-1.0, 1.0)
        u = rng.random()
        if GIBBS_CONDITIONAL_BOUND * u <= gibbs_conditional_density(y, given):
            return y
    raise SamplerStuck(f"conditional sampler: {attempt_cap} rejections")


def gibbs_step(x, rng: np.random.Generator) -> State:
    """One fixed-scan sweep: refresh the first coordinate given the second,
    then the second given the fresh first."""
    x = np.asarray(x, dtype=np.float64)
    y1 = _sample_conditional(float(x[1]), rng)
    y2 = _sample_conditional(y1, rng)
    return np.array([y1, y2])


def gibbs_transition_density(x, y) -> float:
    """One-sweep transition density with respect to Lebesgue measure."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return (gibbs_conditional_density(float(y[0]), float(x[1]))
            * gibbs_conditional_density(float(y[1]), float(y[0])))


def gibbs_transition_density_eta(x, y) -> float:
    """Same kernel, with respect to the uniform probability measure on the
    square (Lebesgue density times the square's area)."""
    return 4.0 * gibbs_transition_density(x, y)


def gibbs_eta_sample(rng: np.random.Generator) -> State:
    """Draw from the reference measure: uniform on [-1,1]^2."""
    return rng.uniform(-1.0, 1.0, size=2)


gibbs_nu = gibbs_eta_sample


def _marginal_cdf(t: float) -> float:
    # first-coordinate marginal of the stationary density is (3/10)(2 - t^2)
    return 0.3 * (2.0 * (t + 1.0) - (t ** 3 + 1.0) / 3.0)


def gibbs_exact_draw(rng: np.random.Generator, tol: float = 1e-12) -> State:
    """Exact draw from the stationary law: invert the first-coordinate
    marginal CDF by bisection, then sample the conditional."""
    u = rng.random()
    lo, hi = -1.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _marginal_cdf(mid) < u:
            lo = mid
        else:
            hi = mid
    x1 = 0.5 * (lo + hi)
    x2 = _sample_conditional(x1, rng)
    return np.array([x1, x2])


def gibbs_chain() -> ChainModel:
    """Gibbs sweep chain with its kernel density and reference sampler."""
    return ChainModel(
        dim=2,
        step=gibbs_step,
        reward=lambda x: 0.0,
        discount=lambda x: 0.0,
        density_eta=gibbs_transition_density_eta,
        eta_sample=gibbs_eta_sample,
        name="gibbs",
    )
