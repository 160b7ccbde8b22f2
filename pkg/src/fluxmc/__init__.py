"""
Monte Carlo posterior-variance estimation for linear-Gaussian 4D-Var.

Ensembles of MAP estimates from perturbed prior means and observations
reproduce the posterior covariance; linear functionals of the ensemble give
posterior variances, and chi-squared intervals bracket the Monte Carlo error.
"""

from .ensemble import (EnsembleConfig, EnsembleStore, empirical_covariance, flux_members,
                       load_store, run_ensemble, sample_member_inputs, save_store)
from .forward import (ForwardOperator, NoiseSpec, PriorSpec, debias_observations,
                      synthetic_operator, toy_operator)
from .functional import (FunctionalSpec, FunctionalUQReport, bracketed_report, credible_interval,
                         empirical_functional_variance, functional_report, functional_values,
                         inflation_deflation_factors, prior_functional_sd, sd_confidence_interval,
                         uncertainty_reduction, variance_confidence_interval)
from .hadamard import ScaledOperatorView, hadamard, scaled_adjoint_apply, scaled_apply, scaled_gram
from .posterior import (FluxPosterior, GaussianPosterior, flux_posterior, map_estimator,
                        map_estimator_covariance, posterior_covariance, posterior_mean)
from .solver import SolverConfig, SolverReport, cost_and_gradient, minimize
from .special import chi2_quantile, normal_quantile

__version__ = "0.1.0"
