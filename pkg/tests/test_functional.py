import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fluxmc.ensemble import EnsembleConfig, EnsembleStore, empirical_covariance, load_store, run_ensemble, save_store
from fluxmc.errors import DimensionError, InsufficientSampleError
from fluxmc.forward import PriorSpec
from fluxmc.functional import (CSV_COLUMNS, FunctionalSpec, IntervalSide, bracketed_report, credible_interval,
                               empirical_functional_variance, functional_report, functional_values,
                               inflation_deflation_factors, prior_functional_sd, sd_confidence_interval,
                               uncertainty_reduction, variance_confidence_interval, write_reports_json,
                               write_timeseries_csv)
from fluxmc.posterior import posterior_covariance

Z975 = 1.959963984540054


def scipy_factors(M, alpha=0.05):
    """Factors from scipy's chi-squared quantiles, an implementation independent of fluxmc.special."""
    d = M - 1
    return math.sqrt(d / stats.chi2.ppf(1 - alpha / 2, d)), math.sqrt(d / stats.chi2.ppf(alpha / 2, d))


def small_store(rng, M=7, m=4):
    return EnsembleStore({"M": M, "m": m}, rng.standard_normal((M, m)), rng.uniform(0.5, 2, m))


# ---- functional values and variance

def test_functional_values_examples():
    rng = np.random.default_rng(0)
    store = small_store(rng)
    e2 = np.eye(4)[2]
    np.testing.assert_array_equal(functional_values(store, FunctionalSpec(e2)), store.members[:, 2])
    np.testing.assert_array_equal(functional_values(store, FunctionalSpec(np.zeros(4))), np.zeros(7))
    h = rng.standard_normal(4)
    loop = [sum(h[j] * store.members[k, j] for j in range(4)) for k in range(7)]
    np.testing.assert_allclose(functional_values(store, FunctionalSpec(h)), loop, rtol=1e-14)
    flux = [sum(h[j] * store.members[k, j] * store.control[j] for j in range(4)) for k in range(7)]
    np.testing.assert_allclose(functional_values(store, FunctionalSpec(h, include_control=True)), flux,
                               rtol=1e-14)
    np.testing.assert_allclose(functional_values(store, FunctionalSpec(h), chunk=2),
                               functional_values(store, FunctionalSpec(h)), rtol=0)
    with pytest.raises(DimensionError):
        functional_values(store, FunctionalSpec(np.ones(3)))


def test_empirical_variance_examples():
    assert empirical_functional_variance([3.0, 3.0, 3.0]) == 0.0
    assert empirical_functional_variance([0.0, 2.0]) == 2.0
    with pytest.raises(InsufficientSampleError):
        empirical_functional_variance([1.0])


def test_variance_equals_quadratic_form():
    rng = np.random.default_rng(1)
    store = small_store(rng, M=40, m=6)
    h = rng.standard_normal(6)
    s2 = empirical_functional_variance(functional_values(store, FunctionalSpec(h)))
    assert s2 == pytest.approx(h @ empirical_covariance(store) @ h, rel=1e-12)


def test_variance_is_shift_stable():
    # two-pass variance survives a large common offset
    x = 1e9 + np.array([0.0, 1.0, 2.0, 3.0])
    assert empirical_functional_variance(x) == pytest.approx(5.0 / 3.0, rel=1e-9)


# ---- factors and intervals

def test_factors_against_independent_quantiles():
    for M in (2, 3, 10, 30, 60, 100, 1000, 10**4, 10**5, 10**6):
        L, R = inflation_deflation_factors(M, 0.05)
        Ls, Rs = scipy_factors(M)
        assert L == pytest.approx(Ls, rel=1e-10) and R == pytest.approx(Rs, rel=1e-10)


def test_factors_large_M_match_published_rows():
    published = {10_000: (0.9863, 1.0141), 100_000: (0.9956, 1.0044), 1_000_000: (0.9986, 1.0014)}
    for M, (L, R) in published.items():
        got = inflation_deflation_factors(M, 0.05)
        assert round(got[0], 4) == L and round(got[1], 4) == R


def test_small_M_factors_use_M_minus_1_degrees_of_freedom():
    # with M - 1 degrees of freedom; see the acceptance module for the published small-M rows
    assert inflation_deflation_factors(10) == pytest.approx((0.68784, 1.82561), abs=5e-6)
    assert inflation_deflation_factors(100) == pytest.approx((0.87801, 1.16168), abs=5e-6)
    assert inflation_deflation_factors(1000) == pytest.approx((0.95801, 1.04587), abs=5e-6)


def test_factor_sixty_members():
    L, R = inflation_deflation_factors(60)
    assert abs(R - 1.22) <= 0.005 and abs(L - 0.85) <= 0.005


def test_factor_monotonicity():
    Ms = [2, 3, 5, 10, 30, 100, 1000, 10**4, 10**5, 10**6]
    Ls, Rs = zip(*(inflation_deflation_factors(M) for M in Ms))
    assert all(a < b for a, b in zip(Ls, Ls[1:]))
    assert all(a > b for a, b in zip(Rs, Rs[1:]))
    assert all(L < 1 < R for L, R in zip(Ls, Rs))
    assert 1 - Ls[-1] < 0.0014 + 5e-5 and Rs[-1] - 1 < 0.0014 + 5e-5
    with pytest.raises(InsufficientSampleError):
        inflation_deflation_factors(1)
    with pytest.raises(ValueError):
        inflation_deflation_factors(10, 1.0)


def test_variance_interval_examples():
    assert variance_confidence_interval(0.0, 50) == (0.0, 0.0)
    Ls, Rs = scipy_factors(100)
    lo, hi = variance_confidence_interval(1.0, 100, 0.05)
    assert lo == pytest.approx(Ls ** 2, rel=1e-10) and hi == pytest.approx(Rs ** 2, rel=1e-10)
    assert lo < 1.0 < hi
    with pytest.raises(ValueError):
        variance_confidence_interval(-1.0, 10)
    with pytest.raises(InsufficientSampleError):
        variance_confidence_interval(1.0, 1)


def test_sd_interval_examples():
    Ls, Rs = scipy_factors(100)
    assert sd_confidence_interval(1.0, 100) == pytest.approx((Ls, Rs), rel=1e-10)
    assert sd_confidence_interval(0.0, 100) == (0.0, 0.0)
    for s in (0.3, 1.0, 17.0):
        vlo, vhi = variance_confidence_interval(s * s, 45)
        lo, hi = sd_confidence_interval(s, 45)
        assert lo * lo == pytest.approx(vlo, rel=1e-14) and hi * hi == pytest.approx(vhi, rel=1e-14)
        L, R = inflation_deflation_factors(45)
        assert (lo, hi) == pytest.approx((s * L, s * R), rel=1e-14)
    with pytest.raises(ValueError):
        sd_confidence_interval(-1.0, 10)


def test_one_sided_intervals():
    d = 29
    lo, hi = variance_confidence_interval(2.0, 30, 0.05, IntervalSide.LOWER)
    assert hi == math.inf and lo == pytest.approx(d * 2.0 / stats.chi2.ppf(0.95, d), rel=1e-10)
    lo, hi = variance_confidence_interval(2.0, 30, 0.05, "upper")
    assert lo == 0.0 and hi == pytest.approx(d * 2.0 / stats.chi2.ppf(0.05, d), rel=1e-10)
    two = variance_confidence_interval(2.0, 30, 0.05)
    assert two[0] < variance_confidence_interval(2.0, 30, 0.05, "lower")[0]


def test_credible_interval_examples():
    assert credible_interval(3.0, 0.0) == (3.0, 3.0)
    lo, hi = credible_interval(0.0, 1.0, 0.05)
    assert lo == pytest.approx(-Z975, abs=1e-12) and hi == pytest.approx(Z975, abs=1e-12)
    a, b = credible_interval(2.0, 1.5)
    c, d = credible_interval(2.0, 3.0)
    assert d - c == pytest.approx(2 * (b - a), rel=1e-15)
    assert (a + b) / 2 == pytest.approx(2.0, rel=1e-15)
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            credible_interval(0.0, 1.0, bad)


def test_bracketed_report_example():
    Ls, Rs = scipy_factors(100)
    r = bracketed_report(0.0, 1.0, 100, 0.05, 0.05)
    assert r.inflated_interval == pytest.approx((-Z975 * Rs, Z975 * Rs), rel=1e-10)
    assert r.deflated_interval == pytest.approx((-Z975 * Ls, Z975 * Ls), rel=1e-10)
    assert r.lower_endpoint_ci == pytest.approx((-Z975 * Rs, -Z975 * Ls), rel=1e-10)
    assert r.upper_endpoint_ci == pytest.approx((Z975 * Ls, Z975 * Rs), rel=1e-10)


def test_bracketed_report_collapses_for_large_M():
    r = bracketed_report(5.0, 2.0, 10**6)
    nominal_half = r.nominal_interval[1] - 5.0
    assert (r.inflated_interval[1] - 5.0) / nominal_half - 1 < 0.0014 + 5e-5
    assert 1 - (r.deflated_interval[1] - 5.0) / nominal_half < 0.0014 + 5e-5


@settings(max_examples=200, deadline=None)
@given(M=st.integers(2, 10**6), alpha=st.floats(0.001, 0.5), gamma=st.floats(0.001, 0.5),
       s=st.floats(1e-6, 1e6), phi=st.floats(-1e6, 1e6))
def test_interval_nesting(M, alpha, gamma, s, phi):
    r = bracketed_report(phi, s, M, alpha, gamma)
    assert r.L <= 1 <= r.R
    (dl, dh), (nl, nh), (il, ih) = r.deflated_interval, r.nominal_interval, r.inflated_interval
    assert il <= nl <= dl <= dh <= nh <= ih
    assert r.lower_endpoint_ci[0] <= nl <= r.lower_endpoint_ci[1]
    assert r.upper_endpoint_ci[0] <= nh <= r.upper_endpoint_ci[1]


# ---- coverage of the intervals under known sigma

def test_coverage_simulation_direct_gaussians():
    rng = np.random.default_rng(2024)
    M, N = 30, 10_000
    sigma, phi_map = 1.0, 0.0
    x = rng.standard_normal((N, M)) * sigma
    var_hits = end_hits = 0
    true_lo, true_hi = credible_interval(phi_map, sigma)
    for row in x:
        s2 = empirical_functional_variance(row)
        lo, hi = variance_confidence_interval(s2, M)
        var_hits += lo <= sigma ** 2 <= hi
        r = bracketed_report(phi_map, math.sqrt(s2), M)
        end_hits += (r.lower_endpoint_ci[0] <= true_lo <= r.lower_endpoint_ci[1]
                     and r.upper_endpoint_ci[0] <= true_hi <= r.upper_endpoint_ci[1])
    assert abs(var_hits / N - 0.95) <= 0.007
    assert abs(end_hits / N - 0.95) <= 0.01


def test_pivot_distribution_from_analytic_ensembles(toy):
    op, noise, prior, mu = toy
    M, N = 30, 2000
    cfg = EnsembleConfig(M=M * N, master_seed=3, operator=op, prior=prior, noise=noise, mu=mu)
    store = run_ensemble(cfg, created="test")
    h = np.array([1.0, -2.0])
    true_var = h @ posterior_covariance(op, noise, prior, mu) @ h
    phis = functional_values(store, FunctionalSpec(h)).reshape(N, M)
    pivots = [(M - 1) * empirical_functional_variance(row) / true_var for row in phis]
    assert stats.kstest(pivots, stats.chi2(M - 1).cdf).pvalue > 0.01


# ---- prior SD and reductions

def test_uncertainty_reduction_examples():
    assert uncertainty_reduction(2.0, 2.0) == 0.0
    assert uncertainty_reduction(0.0, 2.0) == 1.0
    assert uncertainty_reduction(1.2, 1.0) == pytest.approx(-0.2, rel=1e-14)
    with pytest.raises(ValueError):
        uncertainty_reduction(1.0, 0.0)


def test_prior_sd_conventions():
    prior = PriorSpec.unit_mean(5, 2.25)
    e1 = FunctionalSpec(np.eye(5)[1], include_control=True)
    mu = np.array([3.0, 1.0, 2.0, 4.0, 5.0])
    assert prior_functional_sd(e1, mu, prior, "model") == pytest.approx(1.5)
    assert prior_functional_sd(e1, mu, prior, "paper-figure") == pytest.approx(1.5)
    rng = np.random.default_rng(4)
    h, mu = rng.standard_normal(5), rng.standard_normal(5)
    spec = FunctionalSpec(h, include_control=True)
    oracle = math.sqrt(h @ (2.25 * np.eye(5) * np.outer(mu, mu)) @ h)
    assert prior_functional_sd(spec, mu, prior) == pytest.approx(oracle, rel=1e-13)
    eq = FunctionalSpec(np.full(5, 0.2), include_control=True)
    assert prior_functional_sd(eq, np.ones(5), prior) == pytest.approx(1.5 * math.sqrt(5 * 0.04))
    assert prior_functional_sd(eq, np.ones(5), prior, "paper-figure") == pytest.approx(1.5)
    with pytest.raises(ValueError):
        prior_functional_sd(eq, np.ones(5), prior, "other")


# ---- reports and export

def test_report_is_reproducible_after_reload(toy, tmp_path):
    op, noise, prior, mu = toy
    store = run_ensemble(EnsembleConfig(M=60, master_seed=8, operator=op, prior=prior, noise=noise, mu=mu),
                         created="test")
    spec = FunctionalSpec([1.0, 1.0], include_control=True, label="total")
    before = functional_report(store, spec, 1.3, prior=prior)
    save_store(store, tmp_path / "e.ens")
    after = functional_report(load_store(tmp_path / "e.ens"), spec, 1.3, prior=prior)
    assert before.to_json() == after.to_json()
    assert before.sigma_prior == pytest.approx(2.0 * math.sqrt(0.25 + 1.0))
    assert before.reduction_inflated < before.reduction_point


def test_exports(tmp_path):
    reports = [bracketed_report(1.0, 0.5, 60, label="jan", sigma_prior=1.0),
               bracketed_report(-2.0, 0.1, 60, label="feb")]
    write_timeseries_csv(reports, tmp_path / "t.csv")
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1][0] == "jan" and float(rows[1][1]) == 1.0
    assert float(rows[1][-2]) == pytest.approx(50.0)
    assert rows[2][-1] == ""
    write_reports_json(reports, tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    fields = {"phi_map", "sigma_hat", "M", "alpha", "gamma", "L", "R", "nominal_interval",
              "inflated_interval", "deflated_interval", "lower_endpoint_ci", "upper_endpoint_ci"}
    assert fields <= set(data[0])
    assert data[0]["R"] == reports[0].R  # full precision survives
