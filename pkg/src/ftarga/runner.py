"""Experiment runner: configs, training/validation drivers, artifacts.

Five experiment ids ship:

* ``fluid-hitting``               expected hitting time of the low-load set
                                  of the two-station fluid network
* ``kw-hitting``                  same for the two-server workload chain,
                                  trained through path segments on a window
* ``bernoulli-poisson-linear``    centered long-run value of the Bernoulli
* ``bernoulli-poisson-quadratic``   convolution, identity / squared reward
* ``gibbs-density``               stationary density of the Gibbs sweep chain

Each run writes to its output directory: ``manifest.json`` (full config plus
code version), ``loss.csv`` (iteration,loss_mean,loss_stderr), ``checkpoint``
(versioned JSON parameters), and on validation ``grid_learned.csv``,
``grid_oracle.csv`` (same grid, so they pair for plotting) and
``summary.json`` with the comparison metrics and the pass gate.

Seed discipline, all derived from the one run seed: network init uses the
root stream; training splits the root into sampling and probe children (see
``rga.train``); the validation oracle draws from the stream keyed
``[seed, 1]``. Single-threaded runs are byte-reproducible; the oracle is
reproducible at any thread count.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import chains, oracles
from .neural import MlpParams, forward_many, init_params, load_params, pinned_value_many, save_params
from .oracles import GridSpec, OracleEstimate, grid_eval, mc_hitting_time, write_grid_csv
from .rga import (
    DensityProblem,
    FtaProblem,
    PoissonProblem,
    SegmentFtaProblem,
    TrainConfig,
    TrainResult,
    train,
)

EXPERIMENTS = (
    "fluid-hitting",
    "kw-hitting",
    "bernoulli-poisson-linear",
    "bernoulli-poisson-quadratic",
    "gibbs-density",
)

PAPER_ITERATIONS = 1_000_000
DESK_ITERATIONS = 200_000


@dataclass
class NetworkConfig:
    width: int
    activation: str = "sigmoid"
    output_clip: float | None = None
    depth: int = 1


@dataclass
class OracleConfig:
    replications: int
    step_cap: int = 10 ** 7


@dataclass
class ExperimentConfig:
    experiment: str
    train: TrainConfig
    network: NetworkConfig
    oracle: OracleConfig
    grid_spacing: float
    seed: int = 0
    out_dir: str = "out"
    segment_cap: int = 10 ** 6
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(
                f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a (possibly partial) JSON dict.

    Missing fields fall back to the experiment's defaults, so a config file
    only needs the fields it changes.
    """
    data = dict(data)
    experiment = data.pop("experiment", None)
    if experiment is None:
        raise ValueError("config needs an 'experiment' field")
    cfg = default_config(experiment,
                         seed=data.pop("seed", None),
                         paper_scale=data.pop("paper_scale", False))
    for section, cls in (("train", TrainConfig), ("network", NetworkConfig),
                         ("oracle", OracleConfig)):
        patch = data.pop(section, None)
        if patch:
            merged = dataclasses.asdict(getattr(cfg, section))
            unknown = set(patch) - set(merged)
            if unknown:
                raise ValueError(f"unknown {section} fields: {sorted(unknown)}")
            merged.update(patch)
            setattr(cfg, section, cls(**merged))
    for key, val in data.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown config field {key!r}")
        setattr(cfg, key, val)
    return cfg


def default_config(experiment: str, seed: int | None = None, out_dir: str | None = None,
                   paper_scale: bool = False) -> ExperimentConfig:
    """Shipped defaults per experiment.

    Desk scale (the default) trains 2e5 iterations with reduced validation
    grids; ``paper_scale`` restores 1e6 iterations, the fine export grids,
    and the large oracle replication counts.
    """
    seed = 0 if seed is None else int(seed)
    iters = PAPER_ITERATIONS if paper_scale else DESK_ITERATIONS
    if experiment == "fluid-hitting":
        cfg = ExperimentConfig(
            experiment,
            TrainConfig(iters, 1e-3, batch_size=8, seed=seed, log_every=10_000,
                        probe_samples=2000),
            NetworkConfig(width=1000),
            OracleConfig(replications=1000),
            grid_spacing=0.1 if paper_scale else 0.5,
        )
    elif experiment == "kw-hitting":
        cfg = ExperimentConfig(
            experiment,
            TrainConfig(iters, 1e-3, batch_size=8, seed=seed, log_every=10_000,
                        probe_samples=2000),
            NetworkConfig(width=1000),
            OracleConfig(replications=10_000 if paper_scale else 2000),
            grid_spacing=0.2 if paper_scale else 0.5,
        )
    elif experiment == "bernoulli-poisson-linear":
        # Plain SGD with batch 4 lands an order of magnitude inside the
        # error budget here; Adam's normalized steps keep oscillating.
        cfg = ExperimentConfig(
            experiment,
            TrainConfig(iters, 1e-2, batch_size=4, seed=seed, log_every=10_000,
                        probe_samples=2000, optimizer="sgd"),
            NetworkConfig(width=200),
            OracleConfig(replications=0),  # closed-form oracle
            grid_spacing=0.01,
        )
    elif experiment == "bernoulli-poisson-quadratic":
        # The squared reward leans on a curvature direction that the
        # near-linear sigmoid features condition badly, so plain SGD
        # stalls short of the target within this iteration budget.
        # Heavy-momentum Adam rescales the slow direction and averages
        # out estimator noise; batch 16 keeps the residual jitter small.
        cfg = ExperimentConfig(
            experiment,
            TrainConfig(iters, 1e-2, batch_size=16, seed=seed, log_every=10_000,
                        probe_samples=2000, optimizer="adam",
                        adam_beta1=0.99, adam_beta2=0.9999),
            NetworkConfig(width=200),
            OracleConfig(replications=0),  # closed-form oracle
            grid_spacing=0.01,
        )
    elif experiment == "gibbs-density":
        cfg = ExperimentConfig(
            experiment,
            TrainConfig(iters, 3e-3, batch_size=4, seed=seed, log_every=10_000,
                        probe_samples=2000),
            NetworkConfig(width=200),
            OracleConfig(replications=0),  # closed-form oracle
            grid_spacing=0.1,
        )
    else:
        raise ValueError(f"unknown experiment {experiment!r}")
    cfg.seed = seed
    cfg.train.seed = seed
    if out_dir is not None:
        cfg.out_dir = out_dir
    return cfg


# ---------------------------------------------------------------------------
# Problem construction

def build_problem(cfg: ExperimentConfig):
    """Instantiate (problem, fresh network) for a config."""
    exp = cfg.experiment
    if exp == "fluid-hitting":
        chain, regions = chains.fluid_hitting()
        problem = FtaProblem(chain, regions)
        dim = 2
    elif exp == "kw-hitting":
        chain, regions = chains.gg2_hitting()
        problem = SegmentFtaProblem(chain, regions, cfg.segment_cap)
        dim = 2
    elif exp.startswith("bernoulli-poisson-"):
        kind = exp.rsplit("-", 1)[1]
        chain = chains.bernoulli_chain(kind)
        problem = PoissonProblem(chain, chains.bernoulli_nu)
        dim = 1
    elif exp == "gibbs-density":
        chain = chains.gibbs_chain()
        problem = DensityProblem(chain, chains.gibbs_nu)
        dim = 2
    else:
        raise ValueError(f"unknown experiment {exp!r}")
    net = init_params(cfg.seed, dim, cfg.network.width, cfg.network.activation,
                      cfg.network.output_clip, cfg.network.depth)
    return problem, net


def _grid_and_region(cfg: ExperimentConfig):
    """Validation lattice and keep-predicate for the experiment."""
    exp = cfg.experiment
    s = cfg.grid_spacing
    if exp == "fluid-hitting":
        _, regions = chains.fluid_hitting()
        return GridSpec(((0.0, 5.0, s), (0.0, 5.0, s))), regions.in_continuation
    if exp == "kw-hitting":
        _, regions = chains.gg2_hitting()
        return GridSpec(((3.0, 9.0, s), (3.0, 9.0, s))), regions.in_window
    if exp.startswith("bernoulli-poisson-"):
        return GridSpec(((0.0, 1.0, s),)), None
    if exp == "gibbs-density":
        return GridSpec(((-1.0, 1.0, s), (-1.0, 1.0, s))), None
    raise ValueError(exp)


def _oracle_rng(cfg: ExperimentConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))


# ---------------------------------------------------------------------------
# Artifact writers

def _write_loss_csv(path, loss_log) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,loss_mean,loss_stderr\n")
        for it, mean, err in loss_log:
            fh.write(f"{it},{mean:.10g},{err:.10g}\n")


def _write_manifest(path, cfg: ExperimentConfig) -> None:
    record = {"code_version": __version__, "config": cfg.to_dict()}
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_train(cfg: ExperimentConfig) -> TrainResult:
    """Train the experiment's network and write manifest, loss log, checkpoint."""
    problem, net = build_problem(cfg)
    result = train(problem, net, cfg.train)
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_manifest(os.path.join(cfg.out_dir, "manifest.json"), cfg)
    _write_loss_csv(os.path.join(cfg.out_dir, "loss.csv"), result.loss_log)
    save_params(os.path.join(cfg.out_dir, "checkpoint"), result.params)
    return result


# ---------------------------------------------------------------------------
# Validation

def _as_net(cfg: ExperimentConfig, net):
    if net is None:
        net = os.path.join(cfg.out_dir, "checkpoint")
    if isinstance(net, (str, os.PathLike)):
        return load_params(net)
    return net


def _learned_values(cfg: ExperimentConfig, net, pts: np.ndarray) -> np.ndarray:
    """Evaluate the learned object on points, in the units being compared.

    For the density experiment the network's pinned ratio is scaled by the
    exact density at the origin, so both CSVs are in density units. Callables
    are taken at face value (already in comparison units).
    """
    if isinstance(net, MlpParams):
        if cfg.experiment == "gibbs-density":
            scale = oracles.gibbs_exact_density(np.zeros(2))
            return pinned_value_many(net, pts) * scale
        return forward_many(net, pts)
    return np.array([float(net(p)) for p in pts])


def oracle_grid(cfg: ExperimentConfig, pts: np.ndarray):
    """Reference values (and stderr where Monte Carlo) on given points."""
    exp = cfg.experiment
    if exp in ("fluid-hitting", "kw-hitting"):
        chain, regions = (chains.fluid_hitting() if exp == "fluid-hitting"
                          else chains.gg2_hitting())
        rng = _oracle_rng(cfg)
        means = np.empty(len(pts))
        errs = np.empty(len(pts))
        for i, p in enumerate(pts):
            est = mc_hitting_time(chain, p, regions.in_target,
                                  cfg.oracle.replications, rng,
                                  cfg.oracle.step_cap, cfg.threads)
            means[i], errs[i] = est.mean, est.stderr
        return means, errs
    if exp.startswith("bernoulli-poisson-"):
        kind = exp.rsplit("-", 1)[1]
        return oracles.poisson_exact_bernoulli(kind, pts[:, 0]), None
    if exp == "gibbs-density":
        return oracles.gibbs_exact_density(pts), None
    raise ValueError(exp)


def run_validate(cfg: ExperimentConfig, net=None) -> dict:
    """Compare learned values against the oracle on the experiment's grid.

    ``net`` may be trained parameters, a checkpoint path (default: the one in
    the config's output directory), or a plain callable such as a closed-form
    solution. Writes grid_learned.csv, grid_oracle.csv, summary.json; returns
    the summary dict.
    """
    net = _as_net(cfg, net)
    spec, region = _grid_and_region(cfg)
    pts, _ = grid_eval(lambda p: 0.0, spec, region)
    learned = _learned_values(cfg, net, pts)
    ref, ref_err = oracle_grid(cfg, pts)

    exp = cfg.experiment
    if exp.startswith("bernoulli-poisson-"):
        # solutions are defined up to a constant; align at the anchor x = 0.5
        anchor = int(np.argmin(np.abs(pts[:, 0] - 0.5)))
        learned = learned + (ref[anchor] - learned[anchor])

    diff = learned - ref
    summary = {
        "experiment": exp,
        "n_points": int(len(pts)),
        "rmse": float(np.sqrt(np.mean(diff ** 2))),
        "mae": float(np.mean(np.abs(diff))),
        "max_abs_error": float(np.max(np.abs(diff))),
    }
    if exp == "fluid-hitting":
        # near the target set the oracle mean is ~1 step with tiny relative
        # spread, so the Monte Carlo stderr provides the floor
        tol = np.maximum(3.0 * ref_err, 0.10 * ref)
        frac = float(np.mean(np.abs(diff) <= tol))
        summary.update(rel_tolerance=0.10, fraction_within=frac,
                       fraction_required=0.90, passed=bool(frac >= 0.90))
    elif exp == "kw-hitting":
        frac = float(np.mean(np.abs(diff) <= 0.15 * ref))
        summary.update(rel_tolerance=0.15, fraction_within=frac,
                       fraction_required=0.85, passed=bool(frac >= 0.85))
    elif exp.startswith("bernoulli-poisson-"):
        summary.update(anchor=0.5, rmse_tolerance=0.05,
                       passed=bool(summary["rmse"] <= 0.05))
    else:
        summary.update(mae_tolerance=0.02, passed=bool(summary["mae"] <= 0.02))

    os.makedirs(cfg.out_dir, exist_ok=True)
    write_grid_csv(os.path.join(cfg.out_dir, "grid_learned.csv"), pts, learned)
    write_grid_csv(os.path.join(cfg.out_dir, "grid_oracle.csv"), pts, ref, ref_err)
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def run_oracle(cfg: ExperimentConfig) -> None:
    """Write only grid_oracle.csv for the experiment's grid."""
    spec, region = _grid_and_region(cfg)
    pts, _ = grid_eval(lambda p: 0.0, spec, region)
    ref, ref_err = oracle_grid(cfg, pts)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_grid_csv(os.path.join(cfg.out_dir, "grid_oracle.csv"), pts, ref, ref_err)


def run_grid(cfg: ExperimentConfig, net=None) -> None:
    """Write only grid_learned.csv for a checkpoint."""
    net = _as_net(cfg, net)
    spec, region = _grid_and_region(cfg)
    pts, _ = grid_eval(lambda p: 0.0, spec, region)
    learned = _learned_values(cfg, net, pts)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_grid_csv(os.path.join(cfg.out_dir, "grid_learned.csv"), pts, learned)


def run_all(seed: int, out_root: str, paper_scale: bool = False, threads: int = 1,
            iterations_override: int | None = None,
            oracle_replications_override: int | None = None) -> dict:
    """Train and validate every experiment under out_root/<experiment>/.

    The two override knobs exist for quick smoke/reproducibility runs; they
    shrink every experiment uniformly without touching anything else.
    """
    results = {}
    for experiment in EXPERIMENTS:
        cfg = default_config(experiment, seed=seed, paper_scale=paper_scale,
                             out_dir=os.path.join(out_root, experiment))
        cfg.threads = threads
        if iterations_override is not None:
            cfg.train.iterations = iterations_override
            cfg.train.log_every = 0
        if oracle_replications_override is not None and cfg.oracle.replications:
            cfg.oracle.replications = oracle_replications_override
        run_train(cfg)
        results[experiment] = run_validate(cfg)
    return {"experiments": results,
            "all_passed": bool(all(r["passed"] for r in results.values()))}
