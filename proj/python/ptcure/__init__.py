"""Marginal promotion time cure models for clustered survival data."""

from ._core import (
    Dataset,
    InputError,
    NumericalError,
    __version__,
    bivariate_normal_cdf,
    bootstrap,
    estimate_baseline,
    expected_censoring_rate,
    fit,
    kaplan_meier,
    run_study,
    simulate,
    solve_emrich,
    solve_lambda,
    true_baseline_cdf,
)

__all__ = [
    "Dataset",
    "InputError",
    "NumericalError",
    "__version__",
    "bivariate_normal_cdf",
    "bootstrap",
    "estimate_baseline",
    "expected_censoring_rate",
    "fit",
    "kaplan_meier",
    "run_study",
    "simulate",
    "solve_emrich",
    "solve_lambda",
    "true_baseline_cdf",
]
