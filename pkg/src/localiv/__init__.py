"""Local instrumental-variable analysis through principal stratification.

A continuous instrument ``Z`` and a latent threshold ``S`` determine
treatment, ``T = 1{Z >= S}``.  Hierarchical Bayesian selection and outcome
models are fitted by Metropolis-within-Gibbs, and marginal, treated and
policy-relevant effects are read off the posterior draws.
"""
from .data import (Dataset, IVRange, OutcomeSpec, PriorConfig, ValidationError, empirical_quantile,
                   read_csv, validate)
from .kernels import BACKEND
from .estimands import aggregate, att_draw, mte_curve, prte_draw
from .mcmc import ChainConfig, Diagnostics, PosteriorStore, gelman_rubin, run
from .sensitivity import r_from_draw, sensitivity_sweep

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ChainConfig", "Dataset", "Diagnostics", "IVRange", "OutcomeSpec", "PosteriorStore",
    "PriorConfig", "ValidationError", "aggregate", "att_draw", "empirical_quantile", "gelman_rubin",
    "mte_curve", "prte_draw", "r_from_draw", "read_csv", "run", "sensitivity_sweep", "validate",
    "__version__",
]
