"""Bayesian effect selection in structured additive distributional regression.

Continuous, spatial, and parametric effects are built from bases with
quadratic penalties; a spike-and-slab prior on each effect's scale yields
posterior inclusion probabilities alongside model-averaged effect estimates.
"""

from .design import (
    DecomposedEffect,
    EffectBlock,
    decompose_effect,
    make_bspline_block,
    make_constraint,
    make_gmrf_block,
    make_linear_block,
)
from .elicitation import ElicitationTarget, elicit_block, solve_b, solve_r
from .engine import (
    ConfigError,
    DataError,
    EngineError,
    ModelConfig,
    PosteriorSummary,
    ScoreReport,
    assemble,
    compute_scores,
    load_dataset,
    parse_model_config,
    read_draws,
    run_chains,
    summarize,
    write_draws,
    write_outputs,
)
from .families import Family, get_family
from .model import (
    BlockPrior,
    Model,
    build_model,
    make_intercept_block,
    make_random_intercept_block,
    propriety_spec,
)
from .prior import (
    NbpssHyper,
    marginal_beta_logpdf,
    marginal_tau2_logpdf,
    score_beta,
    tau_logpdf,
)
from .propriety import ProprietyReport, check_propriety
from .sampler import ChainConfig, ChainOutput, SamplerError, run_chain
from .simulate import generate_scenario, write_simulation

__version__ = "0.1.0"

__all__ = [
    "BlockPrior",
    "ChainConfig",
    "ChainOutput",
    "ConfigError",
    "DataError",
    "DecomposedEffect",
    "EffectBlock",
    "ElicitationTarget",
    "EngineError",
    "Family",
    "Model",
    "ModelConfig",
    "NbpssHyper",
    "PosteriorSummary",
    "ProprietyReport",
    "SamplerError",
    "ScoreReport",
    "assemble",
    "build_model",
    "check_propriety",
    "compute_scores",
    "decompose_effect",
    "elicit_block",
    "generate_scenario",
    "get_family",
    "load_dataset",
    "make_bspline_block",
    "make_constraint",
    "make_gmrf_block",
    "make_intercept_block",
    "make_linear_block",
    "make_random_intercept_block",
    "marginal_beta_logpdf",
    "marginal_tau2_logpdf",
    "parse_model_config",
    "propriety_spec",
    "read_draws",
    "run_chain",
    "run_chains",
    "score_beta",
    "solve_b",
    "solve_r",
    "summarize",
    "tau_logpdf",
    "write_draws",
    "write_outputs",
    "write_simulation",
    "__version__",
]
