"""Bias correction for maximum likelihood estimators.

Jackknife, split-sample, bootstrap and analytic bias corrections for scalar
models in cross-sections and fixed-effects panels, with higher-order
variance estimates, V-statistic identities and a Monte Carlo harness.
"""

from .corrections import (
    BiasEstimate,
    Method,
    analytic_bias_infoeq,
    analytic_bias_integral,
    analytic_bias_sample,
    apply_correction,
    ar1_analytic_bias,
    ar1_analytic_correct,
    bootstrap_bias,
    jackknife_bias,
    panel_jackknife_bias,
    panel_split_sample_bias,
    split_sample_bias,
)
from .errors import BiasCorrError
from .estimate import Estimate, PanelEstimate, SolverOpts, fit_mle, fit_panel_mle
from .hovar import HigherOrderVariance, estimate_hovar_panel, estimate_upsilon_cross
from .models import Dataset, PanelDataset, PanelModel, ScalarModel, builtin_model
from .montecarlo import DgpSpec, SimulationConfig, generate, render_summary, run_experiment

__all__ = [
    "BiasCorrError",
    "BiasEstimate",
    "Dataset",
    "DgpSpec",
    "Estimate",
    "HigherOrderVariance",
    "Method",
    "PanelDataset",
    "PanelEstimate",
    "PanelModel",
    "ScalarModel",
    "SimulationConfig",
    "SolverOpts",
    "analytic_bias_infoeq",
    "analytic_bias_integral",
    "analytic_bias_sample",
    "apply_correction",
    "ar1_analytic_bias",
    "ar1_analytic_correct",
    "bootstrap_bias",
    "builtin_model",
    "estimate_hovar_panel",
    "estimate_upsilon_cross",
    "fit_mle",
    "fit_panel_mle",
    "generate",
    "jackknife_bias",
    "panel_jackknife_bias",
    "panel_split_sample_bias",
    "render_summary",
    "run_experiment",
    "split_sample_bias",
]
