"""Residual-gradient learning of Markov-chain value functions and densities."""

__version__ = "0.1.0"

from .chains import (
    ChainModel,
    PathSegment,
    RegionSpec,
    SamplerStuck,
    StepCapExceeded,
    bernoulli_chain,
    bernoulli_step,
    fluid_apply,
    fluid_hitting,
    gg2_hitting,
    gibbs_chain,
    gibbs_step,
    gibbs_transition_density,
    kw_apply,
    sample_first_transition,
    simulate_segment,
)
from .neural import (
    AdamState,
    MlpParams,
    TrainingDiverged,
    adam_step,
    forward,
    grad_params,
    init_adam,
    init_params,
    load_params,
    save_params,
)
from .oracles import (
    GridSpec,
    OracleEstimate,
    gibbs_exact_density,
    grid_eval,
    mc_hitting_time,
    poisson_exact_bernoulli,
)
from .rga import (
    TrainConfig,
    TrainResult,
    density_rga,
    fta_rga,
    noncompact_fta_rga,
    poisson_rga,
    residual_loss_estimate,
)
from .runner import (
    EXPERIMENTS,
    ExperimentConfig,
    default_config,
    run_all,
    run_train,
    run_validate,
)
