"""Stochastic-gradient MCMC samplers and a convergence benchmark harness."""

from .diagnostics import (
    BiasMse,
    LogLogFit,
    WeakOrderResult,
    batch_means,
    estimate_bias_mse,
    fit_loglog_slope,
    sample_average,
    weak_order_estimate,
    weighted_sample_average,
)
from .integrators import (
    DivergenceError,
    IntegratorConfig,
    IntegratorKind,
    RunTrace,
    SamplerConfig,
    State,
    run_chain,
    sghmc_aboba_step,
    sghmc_euler_step,
    sgld_step,
    sgnht_step,
)
from .models import (
    GaussianConjugateModel,
    Minibatch,
    MinibatchStream,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .schedules import ScheduleSums, StepSchedule, optimal_alpha, validate_schedule

__version__ = "0.1.0"

__all__ = [
    "BiasMse",
    "DivergenceError",
    "GaussianConjugateModel",
    "IntegratorConfig",
    "IntegratorKind",
    "LogLogFit",
    "Minibatch",
    "MinibatchStream",
    "RunTrace",
    "SamplerConfig",
    "ScheduleSums",
    "State",
    "StepSchedule",
    "WeakOrderResult",
    "batch_means",
    "estimate_bias_mse",
    "fit_loglog_slope",
    "generate_dataset",
    "load_dataset",
    "optimal_alpha",
    "run_chain",
    "sample_average",
    "save_dataset",
    "sghmc_aboba_step",
    "sghmc_euler_step",
    "sgld_step",
    "sgnht_step",
    "validate_schedule",
    "weak_order_estimate",
    "weighted_sample_average",
]
