"""Residual-gradient training of value networks by double sampling.

All four trainers share one template. Each iteration draws an anchor state
and two conditionally independent continuations from it (a "forward" and a
"mirror" draw). The loss is the expectation of the product of the two
one-sample residuals; because the draws are conditionally independent given
the anchor, that product is an unbiased estimate of the squared conditional
residual, and

    estimate = 2 * (forward residual) * (mirror gradient factor)

is an unbiased gradient estimate. The symmetric two-term variant (forward and
mirror exchanged and averaged) is available behind ``TrainConfig.symmetric``.

The four problem flavors differ only in what a residual is:

* ``FtaProblem``        value = expected discounted reward until exiting the
                        continuation set; residual from one transition.
* ``SegmentFtaProblem`` same target on an unbounded space; the transition is
                        replaced by a path run until it re-enters a bounded
                        training window or the target set.
* ``PoissonProblem``    centered fixed point of the two-step difference
                        equation u - 2Pu + P^2u = r - Pr, which removes the
                        unknown centering constant; solutions are determined
                        up to an additive constant.
* ``DensityProblem``    stationary density ratio, pinned to equal 1 at the
                        origin via value(x) - value(0) + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .chains import ChainModel, PathSegment, RegionSpec, sample_nu, simulate_segment
from .neural import (
    MlpParams,
    TrainingDiverged,
    adam_step,
    forward_many,
    init_adam,
    value_and_grad_many,
)

ValueFn = Union[MlpParams, Callable[[np.ndarray], float]]


@dataclass
class TrainConfig:
    """Knobs of the stochastic-approximation loop. Deterministic given seed."""

    iterations: int
    step_size: float
    batch_size: int = 1
    seed: int = 0
    log_every: int = 0            # extra loss probes every this many steps (0: ends only)
    optimizer: str = "adam"       # "sgd" | "adam"
    probe_samples: int = 1000     # sample count per logged loss estimate
    symmetric: bool = False       # two-term estimator instead of the one-sided one
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.step_size <= 0 or self.batch_size < 1 or self.probe_samples < 2:
            raise ValueError("step_size, batch_size, probe_samples out of range")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.log_every < 0:
            raise ValueError("log_every must be >= 0")


@dataclass(frozen=True)
class ResidualSample:
    """Anchor state plus the forward and mirror continuation payloads."""

    anchor: np.ndarray
    forward: object
    mirror: object


@dataclass
class TrainResult:
    params: MlpParams
    loss_log: list  # rows (iteration, loss_mean, loss_stderr)


def _values(net: ValueFn, pts: np.ndarray) -> np.ndarray:
    if isinstance(net, MlpParams):
        return forward_many(net, pts)
    return np.array([float(net(p)) for p in pts])


# ---------------------------------------------------------------------------
# First-transition problems (one-step and path-segment flavors)

class FtaProblem:
    """Value learning from single transitions.

    Anchor states come from the region sampler; forward and mirror payloads
    are one-step path summaries (accumulated reward, survival weight,
    terminal state), so this shares all estimator arithmetic with the
    segment flavor below and degenerates to it exactly when segments stop
    after one step.
    """

    def __init__(self, chain: ChainModel, regions: RegionSpec):
        self.chain = chain
        self.regions = regions

    def _segment(self, x0: np.ndarray, rng: np.random.Generator) -> PathSegment:
        chain = self.chain
        keep = math.exp(-chain.discount(x0))
        x1 = chain.step(x0, rng)
        if self.regions.in_continuation(x1):
            return PathSegment(chain.reward(x0) + 0.0, keep * 1.0, 1, x1)
        # exiting transitions collect the terminal reward instead of surviving
        return PathSegment(chain.reward(x0) + keep * chain.reward(x1), 0.0, 1, x1)

    def sample(self, rng: np.random.Generator) -> ResidualSample:
        # draw order: anchor, forward payload, mirror payload
        x0 = sample_nu(self.regions, rng)
        fwd = self._segment(x0, rng)
        mir = self._segment(x0, rng)
        return ResidualSample(x0, fwd, mir)

    def residual_pair(self, net: ValueFn, s: ResidualSample) -> tuple[float, float]:
        f, m = s.forward, s.mirror
        v = _values(net, np.stack([s.anchor, f.terminal, m.terminal]))
        res_f = v[0] - f.reward - f.weight * v[1]
        res_m = v[0] - m.reward - m.weight * v[2]
        return float(res_f), float(res_m)

    def gradient_estimate(self, params: MlpParams, samples: Sequence[ResidualSample],
                          symmetric: bool = False) -> np.ndarray:
        n = len(samples)
        pts = np.empty((3 * n, params.input_dim))
        v_f = np.empty(n)
        w_f = np.empty(n)
        v_m = np.empty(n)
        w_m = np.empty(n)
        for i, s in enumerate(samples):
            pts[3 * i] = s.anchor
            pts[3 * i + 1] = s.forward.terminal
            pts[3 * i + 2] = s.mirror.terminal
            v_f[i], w_f[i] = s.forward.reward, s.forward.weight
            v_m[i], w_m[i] = s.mirror.reward, s.mirror.weight
        vals, grads = value_and_grad_many(params, pts)
        vals = vals.reshape(n, 3)
        grads = grads.reshape(n, 3, -1)
        res_f = vals[:, 0] - v_f - w_f * vals[:, 1]
        fac_m = grads[:, 0, :] - w_m[:, None] * grads[:, 2, :]
        if symmetric:
            res_m = vals[:, 0] - v_m - w_m * vals[:, 2]
            fac_f = grads[:, 0, :] - w_f[:, None] * grads[:, 1, :]
            est = res_f[:, None] * fac_m + res_m[:, None] * fac_f
        else:
            est = (2.0 * res_f)[:, None] * fac_m
        return est.mean(axis=0)


class SegmentFtaProblem(FtaProblem):
    """First-transition learning on an unbounded space: continuations are
    paths run until they re-enter the training window or hit the target."""

    def __init__(self, chain: ChainModel, regions: RegionSpec, step_cap: int = 10 ** 6):
        if regions.in_window is None:
            raise ValueError("segment training needs a RegionSpec with a window")
        super().__init__(chain, regions)
        self.step_cap = step_cap

    def _segment(self, x0: np.ndarray, rng: np.random.Generator) -> PathSegment:
        return simulate_segment(self.chain, x0, self.regions, rng, self.step_cap)


# ---------------------------------------------------------------------------
# Centered two-step problem

class PoissonProblem:
    """Long-run-average value learning via the two-step difference equation.

    Payloads are two-step paths from the anchor; the residual is
    u(x0) - 2 u(x1) + u(x2) - r(x0) + r(x1), whose conditional expectation
    vanishes at solutions of u - 2Pu + P^2u = r - Pr.
    """

    def __init__(self, chain: ChainModel, nu: Callable[[np.random.Generator], np.ndarray],
                 reward: Optional[Callable[[np.ndarray], float]] = None):
        self.chain = chain
        self.nu = nu
        self.reward = chain.reward if reward is None else reward

    def sample(self, rng: np.random.Generator) -> ResidualSample:
        # draw order: anchor, forward two-step path, mirror two-step path
        step = self.chain.step
        x0 = self.nu(rng)
        x1 = step(x0, rng)
        x2 = step(x1, rng)
        y1 = step(x0, rng)
        y2 = step(y1, rng)
        return ResidualSample(x0, (x1, x2), (y1, y2))

    def _residuals_from_values(self, v: np.ndarray, s: ResidualSample):
        r = self.reward
        base = v[0] - r(s.anchor)
        res_f = base - 2.0 * v[1] + v[2] + r(s.forward[0])
        res_m = base - 2.0 * v[3] + v[4] + r(s.mirror[0])
        return res_f, res_m

    def residual_pair(self, net: ValueFn, s: ResidualSample) -> tuple[float, float]:
        pts = np.stack([s.anchor, s.forward[0], s.forward[1], s.mirror[0], s.mirror[1]])
        res_f, res_m = self._residuals_from_values(_values(net, pts), s)
        return float(res_f), float(res_m)

    def gradient_estimate(self, params: MlpParams, samples: Sequence[ResidualSample],
                          symmetric: bool = False) -> np.ndarray:
        n = len(samples)
        pts = np.empty((5 * n, params.input_dim))
        for i, s in enumerate(samples):
            pts[5 * i] = s.anchor
            pts[5 * i + 1] = s.forward[0]
            pts[5 * i + 2] = s.forward[1]
            pts[5 * i + 3] = s.mirror[0]
            pts[5 * i + 4] = s.mirror[1]
        vals, grads = value_and_grad_many(params, pts)
        vals = vals.reshape(n, 5)
        grads = grads.reshape(n, 5, -1)
        r = self.reward
        r0 = np.array([r(s.anchor) for s in samples])
        rf = np.array([r(s.forward[0]) for s in samples])
        res_f = vals[:, 0] - 2.0 * vals[:, 1] + vals[:, 2] - r0 + rf
        fac_m = grads[:, 0, :] - 2.0 * grads[:, 3, :] + grads[:, 4, :]
        if symmetric:
            rm = np.array([r(s.mirror[0]) for s in samples])
            res_m = vals[:, 0] - 2.0 * vals[:, 3] + vals[:, 4] - r0 + rm
            fac_f = grads[:, 0, :] - 2.0 * grads[:, 1, :] + grads[:, 2, :]
            est = res_f[:, None] * fac_m + res_m[:, None] * fac_f
        else:
            est = (2.0 * res_f)[:, None] * fac_m
        return est.mean(axis=0)


# ---------------------------------------------------------------------------
# Stationary-density problem

class DensityProblem:
    """Stationary-density-ratio learning for chains with a known kernel density.

    Anchors come from ``nu``; comparison points come from the chain's
    reference measure, NOT from simulating the chain. When the net is raw
    parameters its output is pinned to 1 at the origin (value - value(0) + 1)
    so the zero-residual solution is the stationary density ratio to its
    origin value. Callables passed in are used as-is and should already be
    pinned.
    """

    def __init__(self, chain: ChainModel, nu: Callable[[np.random.Generator], np.ndarray]):
        if chain.density_eta is None or chain.eta_sample is None:
            raise ValueError("density training needs a chain with density_eta and eta_sample")
        self.chain = chain
        self.nu = nu
        self.origin = np.zeros(chain.dim)

    def sample(self, rng: np.random.Generator) -> ResidualSample:
        # draw order: anchor, forward reference point, mirror reference point
        y0 = self.nu(rng)
        zf = self.chain.eta_sample(rng)
        zm = self.chain.eta_sample(rng)
        dens = self.chain.density_eta
        return ResidualSample(y0, (zf, dens(zf, y0)), (zm, dens(zm, y0)))

    def residual_pair(self, net: ValueFn, s: ResidualSample) -> tuple[float, float]:
        (zf, pf), (zm, pm) = s.forward, s.mirror
        if isinstance(net, MlpParams):
            v = forward_many(net, np.stack([s.anchor, zf, zm, self.origin]))
            pinned = v[:3] - v[3] + 1.0
        else:
            pinned = np.array([float(net(p)) for p in (s.anchor, zf, zm)])
        res_f = pinned[0] - pinned[1] * pf
        res_m = pinned[0] - pinned[2] * pm
        return float(res_f), float(res_m)

    def gradient_estimate(self, params: MlpParams, samples: Sequence[ResidualSample],
                          symmetric: bool = False) -> np.ndarray:
        n = len(samples)
        pts = np.empty((3 * n + 1, params.input_dim))
        p_f = np.empty(n)
        p_m = np.empty(n)
        for i, s in enumerate(samples):
            pts[3 * i] = s.anchor
            pts[3 * i + 1], p_f[i] = s.forward
            pts[3 * i + 2], p_m[i] = s.mirror
        pts[-1] = self.origin
        vals, grads = value_and_grad_many(params, pts)
        pinned = vals[:-1].reshape(n, 3) - vals[-1] + 1.0
        g = grads[:-1].reshape(n, 3, -1) - grads[-1]
        res_f = pinned[:, 0] - pinned[:, 1] * p_f
        fac_m = g[:, 0, :] - p_m[:, None] * g[:, 2, :]
        if symmetric:
            res_m = pinned[:, 0] - pinned[:, 2] * p_m
            fac_f = g[:, 0, :] - p_f[:, None] * g[:, 1, :]
            est = res_f[:, None] * fac_m + res_m[:, None] * fac_f
        else:
            est = (2.0 * res_f)[:, None] * fac_m
        return est.mean(axis=0)


Problem = Union[FtaProblem, PoissonProblem, DensityProblem]


# ---------------------------------------------------------------------------
# Loss diagnostic and the shared training loop

def residual_loss_estimate(net: ValueFn, problem, n: int, rng: np.random.Generator):
    """Unbiased estimate (mean, stderr) of the double-sample residual loss.

    ``problem`` is one of the problem objects above, or a (chain, regions)
    tuple which is wrapped as a one-step first-transition problem. The mean
    is of the product of the forward and mirror residuals over n fresh
    samples; it vanishes exactly at the problem's solution.
    """
    if isinstance(problem, tuple):
        problem = FtaProblem(*problem)
    if n < 2:
        raise ValueError("need at least 2 samples for a standard error")
    prods = np.empty(n)
    for i in range(n):
        res_f, res_m = problem.residual_pair(net, problem.sample(rng))
        prods[i] = res_f * res_m
    return float(prods.mean()), float(prods.std(ddof=1) / math.sqrt(n))


def train(problem, net: MlpParams, config: TrainConfig) -> TrainResult:
    """Run the residual-gradient loop; returns trained params and a loss log.

    The seed is split once: one stream drives sampling, a separate stream
    drives the periodic loss probes, so logging never perturbs the
    trajectory. The log always contains iterations 0 and T; ``log_every``
    adds intermediate rows.
    """
    params = net.copy()
    train_ss, probe_ss = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(train_ss)
    probe_rng = np.random.default_rng(probe_ss)
    adam = None
    if config.optimizer == "adam":
        adam = init_adam(params.n_params, config.step_size,
                         config.adam_beta1, config.adam_beta2, config.adam_eps)
    log = []

    def probe(iteration: int) -> None:
        mean, err = residual_loss_estimate(params, problem,
                                           config.probe_samples, probe_rng)
        if not math.isfinite(mean):
            raise TrainingDiverged(iteration, "non-finite loss estimate")
        log.append((iteration, mean, err))

    probe(0)
    for t in range(1, config.iterations + 1):
        samples = [problem.sample(rng) for _ in range(config.batch_size)]
        grad = problem.gradient_estimate(params, samples, config.symmetric)
        if adam is not None:
            adam_step(adam, params, grad)
        else:
            if not np.isfinite(grad).all():
                raise TrainingDiverged(t)
            params.theta -= config.step_size * grad
        if config.log_every and t % config.log_every == 0 and t != config.iterations:
            probe(t)
    if config.iterations > 0:
        probe(config.iterations)
    return TrainResult(params, log)


# ---------------------------------------------------------------------------
# The four public trainers

def fta_rga(chain: ChainModel, regions: RegionSpec, net: MlpParams,
            config: TrainConfig) -> TrainResult:
    """Learn the expected discounted reward until exit, from single transitions."""
    return train(FtaProblem(chain, regions), net, config)


def noncompact_fta_rga(chain: ChainModel, regions: RegionSpec, net: MlpParams,
                       config: TrainConfig, step_cap: int = 10 ** 6) -> TrainResult:
    """Same target on an unbounded space, using window-to-window path segments.

    With a window equal to the whole continuation set every segment stops
    after one step and this coincides with ``fta_rga`` draw for draw.
    """
    return train(SegmentFtaProblem(chain, regions, step_cap), net, config)


def poisson_rga(chain: ChainModel, nu, reward, net: MlpParams,
                config: TrainConfig) -> TrainResult:
    """Learn the centered long-run-average value function (up to a constant)."""
    return train(PoissonProblem(chain, nu, reward), net, config)


def density_rga(chain: ChainModel, nu, net: MlpParams,
                config: TrainConfig) -> TrainResult:
    """Learn the stationary density ratio, pinned to 1 at the origin."""
    return train(DensityProblem(chain, nu), net, config)
