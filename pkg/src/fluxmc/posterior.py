"""
Closed-form Gaussian posterior for an explicit forward matrix.

With prior ``c ~ N(c_b, b2 I)`` and likelihood ``y | c ~ N(A(c * mu), R)``,
``R`` diagonal, the posterior is ``N(alpha, Sigma)`` where

    Sigma^-1 = (A^T R^-1 A) * outer(mu, mu) + I / b2
    alpha    = Sigma ((A^T R^-1 y) * mu + c_b / b2)

These are the reference values against which the Monte Carlo ensemble and
the iterative solver are checked. Dense ``m x m`` work is allowed only up to
``dense_cap``; above it only precision solves are available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DefinitenessError, DimensionError, UnsupportedPathError
from .forward import ForwardOperator, NoiseSpec, PriorSpec
from .hadamard import as_matrix, as_vector, scaled_gram

DENSE_CAP = 4096


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class FluxPosterior:
    """Posterior of the physical quantity ``theta = c * mu``."""

    mean: np.ndarray
    covariance: np.ndarray


def _check(op: ForwardOperator, noise: NoiseSpec, prior: PriorSpec, mu) -> np.ndarray:
    if not op.is_explicit:
        raise UnsupportedPathError("closed-form posterior needs an explicit matrix")
    if noise.n != op.n:
        raise DimensionError(f"noise has {noise.n} entries, operator has n={op.n}")
    if prior.m != op.m:
        raise DimensionError(f"prior has {prior.m} entries, operator has m={op.m}")
    return as_vector(mu, "mu", op.m)


def precision_matrix(op: ForwardOperator, noise: NoiseSpec, prior: PriorSpec, mu) -> np.ndarray:
    """``Sigma^-1``, symmetrized."""
    mu = _check(op, noise, prior, mu)
    prec = scaled_gram(op.matrix, noise.precision, mu)
    prec[np.diag_indices_from(prec)] += 1.0 / prior.variance
    return 0.5 * (prec + prec.T)


class PrecisionFactor:
    """Cholesky factor of the posterior precision.

    ``solve(rhs)`` returns ``Sigma @ rhs`` without forming ``Sigma``; this is
    the only access to the posterior covariance once ``m`` exceeds the cap.
    """

    def __init__(self, op, noise, prior, mu):
        self.precision = precision_matrix(op, noise, prior, mu)
        try:
            self._cho = linalg.cho_factor(self.precision, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise DefinitenessError("posterior precision is not positive definite") from exc
        self.m = self.precision.shape[0]

    def solve(self, rhs) -> np.ndarray:
        return linalg.cho_solve(self._cho, np.asarray(rhs, dtype=np.float64), check_finite=False)

    def covariance(self, dense_cap: int = DENSE_CAP) -> np.ndarray:
        if self.m > dense_cap:
            raise UnsupportedPathError(
                f"m={self.m} exceeds dense cap {dense_cap}; use solve() instead")
        sigma = self.solve(np.eye(self.m))
        return 0.5 * (sigma + sigma.T)


def posterior_covariance(op: ForwardOperator, noise: NoiseSpec, prior: PriorSpec, mu,
                         dense_cap: int = DENSE_CAP) -> np.ndarray:
    """Posterior covariance ``Sigma`` of the scaling factors.

    Computed by a Cholesky solve of the precision against the identity.

    Raises
    ------
    UnsupportedPathError
        Matrix-free operator, or ``m > dense_cap``.
    DefinitenessError
        The precision failed to factorize.
    """
    mu = _check(op, noise, prior, mu)
    if op.m > dense_cap:
        raise UnsupportedPathError(f"m={op.m} exceeds dense cap {dense_cap}")
    return PrecisionFactor(op, noise, prior, mu).covariance(dense_cap)


def _data_term(op: ForwardOperator, noise: NoiseSpec, y, mu) -> np.ndarray:
    y = as_vector(y, "y", op.n)
    return op.adjoint(y / noise.variances) * mu


def posterior_mean(Sigma, op: ForwardOperator, noise: NoiseSpec, y, prior: PriorSpec, mu) -> np.ndarray:
    """``alpha = Sigma((A^T R^-1 y) * mu + c_b / b2)``; ``y`` is already debiased."""
    return map_estimator(op, noise, prior.mean, y, prior, mu, Sigma)


def map_estimator(op: ForwardOperator, noise: NoiseSpec, prior_mean_k, y_k, prior: PriorSpec,
                  mu, Sigma) -> np.ndarray:
    """MAP estimate for prior mean ``prior_mean_k`` and observation ``y_k``.

    ``prior`` supplies only the variance; its mean is ignored in favour of
    ``prior_mean_k`` (the ensemble perturbs the prior mean per member).
    """
    mu = _check(op, noise, prior, mu)
    ck = as_vector(prior_mean_k, "prior_mean_k", op.m)
    Sigma = as_matrix(Sigma, "Sigma")
    if Sigma.shape != (op.m, op.m):
        raise DimensionError(f"Sigma has shape {Sigma.shape}, expected ({op.m}, {op.m})")
    return Sigma @ (_data_term(op, noise, y_k, mu) + ck / prior.variance)


def map_estimators_batch(op: ForwardOperator, noise: NoiseSpec, prior_means, observations,
                         prior: PriorSpec, mu, Sigma) -> np.ndarray:
    """Row-wise :func:`map_estimator` for ``(K, m)`` prior means and ``(K, n)`` observations."""
    mu = _check(op, noise, prior, mu)
    C = np.atleast_2d(np.asarray(prior_means, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    if C.shape[1] != op.m or Y.shape[1] != op.n or C.shape[0] != Y.shape[0]:
        raise DimensionError("batch shapes do not match the operator")
    rhs = ((Y / noise.variances) @ op.matrix) * mu + C / prior.variance
    return rhs @ np.asarray(Sigma).T


def gaussian_posterior(op, noise, prior, mu, y, dense_cap: int = DENSE_CAP) -> GaussianPosterior:
    sigma = posterior_covariance(op, noise, prior, mu, dense_cap)
    alpha = posterior_mean(sigma, op, noise, y, prior, mu)
    return GaussianPosterior(alpha, sigma)


def flux_posterior(post: GaussianPosterior, mu) -> FluxPosterior:
    """Map the scaling-factor posterior to flux space: ``(alpha * mu, Sigma * outer(mu, mu))``."""
    mu = as_vector(mu, "mu", len(post.mean))
    if post.covariance.shape != (len(mu), len(mu)):
        raise DimensionError("covariance does not match mu")
    return FluxPosterior(post.mean * mu, post.covariance * np.outer(mu, mu))


def map_estimator_covariance(op: ForwardOperator, noise: NoiseSpec, prior: PriorSpec, mu,
                             dense_cap: int = DENSE_CAP) -> np.ndarray:
    """Covariance of the per-member MAP estimator, built term by term.

    With ``c_k ~ N(., b2 I)`` and ``y_k ~ N(., R)`` independent, the estimator
    ``Sigma((A^T R^-1 y_k) * mu + c_k / b2)`` has covariance
    ``Sigma (Cov_data + I / b2) Sigma`` where
    ``Cov_data = (A^T R^-1 R R^-1 A) * outer(mu, mu)``. Nothing here assumes
    the result equals ``Sigma``; that identity is what the tests check.
    """
    mu = _check(op, noise, prior, mu)
    sigma = posterior_covariance(op, noise, prior, mu, dense_cap)
    A = op.matrix
    rinv = noise.precision
    # A^T R^-1 Cov[y_k] R^-1 A with Cov[y_k] = R
    left = A.T * rinv[np.newaxis, :]
    data_cov = (left * noise.variances[np.newaxis, :]) @ left.T
    data_cov = data_cov * np.outer(mu, mu)
    prior_cov = (prior.variance / prior.variance ** 2) * np.eye(op.m)
    out = sigma @ (data_cov + prior_cov) @ sigma.T
    return 0.5 * (out + out.T)
