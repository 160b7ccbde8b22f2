"""
Uncertainty quantification for linear functionals of an ensemble.

For a functional ``phi(c) = h^T c`` the ensemble values ``phi_k`` are i.i.d.
Gaussian with the posterior variance ``sigma^2 = h^T Sigma h``. The sample
variance then satisfies ``(M-1) s^2 / sigma^2 ~ chi2(M-1)``, which yields
confidence intervals for ``sigma`` and brackets for both endpoints of the
Bayesian credible interval ``phi_MAP -/+ z sigma``.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ensemble import EnsembleStore
from .errors import DimensionError, InsufficientSampleError
from .forward import PriorSpec
from .hadamard import as_vector
from .special import chi2_quantile, normal_quantile

__all__ = [
    "FunctionalSpec", "FunctionalUQReport", "IntervalSide", "functional_values",
    "empirical_functional_variance", "chi2_quantile", "normal_quantile",
    "variance_confidence_interval", "sd_confidence_interval",
    "inflation_deflation_factors", "credible_interval", "bracketed_report",
    "functional_report", "uncertainty_reduction", "prior_functional_sd",
    "write_reports_json", "write_timeseries_csv", "CSV_COLUMNS",
]


class IntervalSide(str, enum.Enum):
    TWO_SIDED = "two-sided"
    LOWER = "lower"   # lower confidence bound only: [lo, inf)
    UPPER = "upper"   # upper confidence bound only: [0, hi]


@dataclass(frozen=True)
class FunctionalSpec:
    """Weights ``h``; with ``include_control`` they act on flux members ``c * mu``."""

    weights: np.ndarray
    include_control: bool = False
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "weights", as_vector(self.weights, "weights"))

    def effective_weights(self, mu) -> np.ndarray:
        """Weights to apply to scaling-factor members."""
        if self.include_control:
            return self.weights * as_vector(mu, "mu", len(self.weights))
        return self.weights


def _check_level(x, name):
    if not 0.0 < x < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {x}")


def functional_values(store: EnsembleStore, spec: FunctionalSpec, chunk: int = 65536) -> np.ndarray:
    """``phi_k = h^T c_map^k`` for every member, in row chunks."""
    if len(spec.weights) != store.m:
        raise DimensionError(f"weights have length {len(spec.weights)}, store has m={store.m}")
    h = spec.effective_weights(store.control)
    out = np.empty(store.M)
    for lo in range(0, store.M, chunk):
        out[lo:lo + chunk] = store.members[lo:lo + chunk] @ h
    return out


def empirical_functional_variance(phis) -> float:
    """Unbiased sample variance, mean subtracted in a first pass."""
    x = np.asarray(phis, dtype=np.float64).ravel()
    if x.size < 2:
        raise InsufficientSampleError("need at least two functional values")
    dev = x - x.mean()
    return float(dev @ dev) / (x.size - 1)


def inflation_deflation_factors(M: int, alpha: float = 0.05) -> tuple[float, float]:
    """Deflation ``L`` and inflation ``R`` for an ``M``-member ensemble.

    ``L^2 = (M-1) / chi2_{M-1, 1-alpha/2}`` and
    ``R^2 = (M-1) / chi2_{M-1, alpha/2}``; ``L < 1 < R``, both tend to 1.
    """
    if int(M) < 2:
        raise InsufficientSampleError("M must be at least 2")
    _check_level(alpha, "alpha")
    dof = int(M) - 1
    L = math.sqrt(dof / chi2_quantile(dof, 1.0 - alpha / 2.0))
    R = math.sqrt(dof / chi2_quantile(dof, alpha / 2.0))
    return L, R


def variance_confidence_interval(sigma_hat_sq: float, M: int, alpha: float = 0.05,
                                 side: IntervalSide | str = IntervalSide.TWO_SIDED):
    """Confidence interval for the true functional variance.

    Two-sided: ``[(M-1) s2 / chi2_{1-alpha/2}, (M-1) s2 / chi2_{alpha/2}]``.
    One-sided variants put all of ``alpha`` in one tail.
    """
    side = IntervalSide(side)
    if not sigma_hat_sq >= 0 or not math.isfinite(sigma_hat_sq):
        raise ValueError("variance estimate must be finite and non-negative")
    if int(M) < 2:
        raise InsufficientSampleError("M must be at least 2")
    _check_level(alpha, "alpha")
    dof = int(M) - 1
    scaled = dof * sigma_hat_sq
    if side is IntervalSide.TWO_SIDED:
        return (scaled / chi2_quantile(dof, 1.0 - alpha / 2.0),
                scaled / chi2_quantile(dof, alpha / 2.0))
    if side is IntervalSide.LOWER:
        return scaled / chi2_quantile(dof, 1.0 - alpha), math.inf
    return 0.0, scaled / chi2_quantile(dof, alpha)


def sd_confidence_interval(sigma_hat: float, M: int, alpha: float = 0.05,
                           side: IntervalSide | str = IntervalSide.TWO_SIDED):
    """Square roots of :func:`variance_confidence_interval`; two-sided equals ``(s L, s R)``."""
    if sigma_hat < 0:
        raise ValueError("standard deviation estimate must be non-negative")
    lo, hi = variance_confidence_interval(sigma_hat * sigma_hat, M, alpha, side)
    return math.sqrt(lo), math.sqrt(hi)


def credible_interval(phi_map: float, sigma: float, gamma: float = 0.05):
    """Gaussian ``(1 - gamma)`` credible interval ``phi_map -/+ z_{1-gamma/2} sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    _check_level(gamma, "gamma")
    half = normal_quantile(1.0 - gamma / 2.0) * sigma
    return phi_map - half, phi_map + half


def uncertainty_reduction(sigma_posterior: float, sigma_prior: float) -> float:
    """``1 - sigma_posterior / sigma_prior``; negative when the posterior is wider."""
    if not sigma_prior > 0:
        raise ValueError("prior standard deviation must be positive")
    return 1.0 - sigma_posterior / sigma_prior


def prior_functional_sd(spec: FunctionalSpec, mu, prior: PriorSpec, convention: str = "model") -> float:
    """Prior standard deviation of the functional.

    ``model``
        exact value under ``c ~ N(., b2 I)``: ``b * |h_eff|_2`` with
        ``h_eff = h * mu`` for flux functionals.
    ``paper-figure``
        ``b * |sum(h_eff)|``, i.e. ``b`` applied to the aggregated control
        quantity, as used for prior bars in flux time-series plots.
    """
    h = spec.effective_weights(mu)
    b = math.sqrt(prior.variance)
    if convention == "model":
        return b * float(np.sqrt(h @ h))
    if convention == "paper-figure":
        return b * abs(float(h.sum()))
    raise ValueError(f"unknown prior-sd convention {convention!r}")


@dataclass
class FunctionalUQReport:
    phi_map: float
    sigma_hat: float
    M: int
    alpha: float
    gamma: float
    L: float
    R: float
    nominal_interval: tuple
    inflated_interval: tuple
    deflated_interval: tuple
    lower_endpoint_ci: tuple
    upper_endpoint_ci: tuple
    label: str = ""
    phi_mean: float | None = None
    sigma_prior: float | None = None
    reduction_point: float | None = None
    reduction_inflated: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("nominal_interval", "inflated_interval", "deflated_interval",
                  "lower_endpoint_ci", "upper_endpoint_ci"):
            d[k] = list(d[k])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def bracketed_report(phi_map: float, sigma_hat: float, M: int, alpha: float = 0.05,
                     gamma: float = 0.05, *, label: str = "", phi_mean=None,
                     sigma_prior=None) -> FunctionalUQReport:
    """Credible interval plus Monte Carlo brackets for its endpoints.

    The nominal interval uses ``sigma_hat``; the inflated and deflated ones
    use ``sigma_hat * R`` and ``sigma_hat * L``. The endpoint intervals
    ``[phi - z s R, phi - z s L]`` and ``[phi + z s L, phi + z s R]`` cover
    the true credible-interval endpoints jointly with probability
    ``1 - alpha``.
    """
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be non-negative")
    _check_level(gamma, "gamma")
    L, R = inflation_deflation_factors(M, alpha)
    z = normal_quantile(1.0 - gamma / 2.0)
    nominal = credible_interval(phi_map, sigma_hat, gamma)
    inflated = credible_interval(phi_map, sigma_hat * R, gamma)
    deflated = credible_interval(phi_map, sigma_hat * L, gamma)
    lower_ci = (phi_map - z * sigma_hat * R, phi_map - z * sigma_hat * L)
    upper_ci = (phi_map + z * sigma_hat * L, phi_map + z * sigma_hat * R)
    red_point = red_infl = None
    if sigma_prior is not None:
        red_point = uncertainty_reduction(sigma_hat, sigma_prior)
        red_infl = uncertainty_reduction(sigma_hat * R, sigma_prior)
    return FunctionalUQReport(
        phi_map=float(phi_map), sigma_hat=float(sigma_hat), M=int(M), alpha=alpha, gamma=gamma,
        L=L, R=R, nominal_interval=nominal, inflated_interval=inflated,
        deflated_interval=deflated, lower_endpoint_ci=lower_ci, upper_endpoint_ci=upper_ci,
        label=label, phi_mean=None if phi_mean is None else float(phi_mean),
        sigma_prior=None if sigma_prior is None else float(sigma_prior),
        reduction_point=red_point, reduction_inflated=red_infl)


def functional_report(store: EnsembleStore, spec: FunctionalSpec, phi_map: float,
                      alpha: float = 0.05, gamma: float = 0.05, *,
                      prior: PriorSpec | None = None,
                      prior_convention: str = "model") -> FunctionalUQReport:
    """Evaluate ``spec`` on ``store`` and build the bracketed report."""
    phis = functional_values(store, spec)
    sigma_hat = math.sqrt(empirical_functional_variance(phis))
    sigma_prior = None
    if prior is not None:
        sigma_prior = prior_functional_sd(spec, store.control, prior, prior_convention)
    return bracketed_report(phi_map, sigma_hat, store.M, alpha, gamma, label=spec.label,
                            phi_mean=float(phis.mean()), sigma_prior=sigma_prior)


# ---------------------------------------------------------------- export

CSV_COLUMNS = ("label", "phi_map", "sigma_hat", "L", "R", "nominal_lo", "nominal_hi",
               "deflated_lo", "deflated_hi", "inflated_lo", "inflated_hi",
               "pct_reduction_point", "pct_reduction_inflated")


def _csv_row(r: FunctionalUQReport) -> list:
    pct = lambda v: "" if v is None else repr(100.0 * v)
    return [r.label, repr(r.phi_map), repr(r.sigma_hat), repr(r.L), repr(r.R),
            repr(r.nominal_interval[0]), repr(r.nominal_interval[1]),
            repr(r.deflated_interval[0]), repr(r.deflated_interval[1]),
            repr(r.inflated_interval[0]), repr(r.inflated_interval[1]),
            pct(r.reduction_point), pct(r.reduction_inflated)]


def write_timeseries_csv(reports: Iterable[FunctionalUQReport], path) -> None:
    """One row per functional; reductions are in percent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow(_csv_row(r))


def write_reports_json(reports: Sequence[FunctionalUQReport], path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n")
