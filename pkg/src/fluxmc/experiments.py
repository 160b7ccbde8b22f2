"""
Experiment drivers behind the command-line interface.

Each driver takes a plain config dict (see ``DEFAULTS``), runs one study and
returns a JSON-serializable result. File output is left to the caller.

Config sections::

    problem   operator: toy | synthetic | file, epsilon, m, n, smoothness,
              operator_seed, path, offset
    prior     b2, mean ("ones" or list)
    noise     variance (scalar) or variances (list)
    control   mu: list | "seasonal" | {"file": path}
    truth     scaling: "ones" | list      (synthetic observations)
    observations  values: list           (optional, overrides truth)
    grid      cells, periods, areas       (synthetic aggregate functionals)
    ensemble  M, master_seed, solver, workers, max_failure_fraction, exclude_failed
    solver    memory, grad_tol, max_iter
    uq        alpha, gamma, prior_convention, functionals
    coverage  M, replicates
    calibration runs
    output    dir
"""

from __future__ import annotations

import copy
import json
import logging
import math
from pathlib import Path

import numpy as np
from scipy import stats

from .ensemble import EnsembleConfig, empirical_covariance, flux_members, run_ensemble
from .errors import ConfigError
from .forward import (ForwardOperator, NoiseSpec, PriorSpec, debias_observations, load_matrix,
                      synthetic_operator, toy_operator)
from .functional import (FunctionalSpec, bracketed_report, empirical_functional_variance,
                         functional_report, functional_values, inflation_deflation_factors,
                         prior_functional_sd, variance_confidence_interval)
from .posterior import (DENSE_CAP, PrecisionFactor, flux_posterior, GaussianPosterior,
                        map_estimator_covariance, posterior_covariance)
from .rng import PURPOSE_OBSERVATIONS, stream_normals
from .solver import SolverConfig, VariationalProblem, minimize
from .special import normal_quantile

log = logging.getLogger(__name__)

TOY_REL_ERROR_BOUND = 0.01784
TABLE2_M = (10, 100, 1_000, 10_000, 100_000, 1_000_000)

DEFAULTS = {
    "toy2d": {
        "problem": {"operator": "toy", "epsilon": 0.05},
        "prior": {"b2": 4.0, "mean": "ones"},
        "noise": {"variance": 1.0},
        "control": {"mu": [0.5, 1.0]},
        "truth": {"theta": [1.0, 2.0]},
        "ensemble": {"M": 1_000_000, "master_seed": 0, "solver": "analytic", "workers": 1},
        "output": {"dir": "out"},
    },
    "factors": {
        "factors": {"M": list(TABLE2_M), "alpha": 0.05},
        "output": {"dir": "out"},
    },
    "synthetic": {
        "problem": {"operator": "synthetic", "smoothness": 1.5, "operator_seed": 7, "n": 200},
        "grid": {"cells": 6, "periods": 8},
        "prior": {"b2": 2.25, "mean": "ones"},
        "noise": {"variance": 0.25},
        "control": {"mu": "seasonal"},
        "truth": {"scaling": "ones"},
        "ensemble": {"M": 60, "master_seed": 0, "solver": "variational", "workers": 1,
                     "max_failure_fraction": 0.0, "exclude_failed": False},
        "solver": {"memory": 10, "grad_tol": 1e-9, "max_iter": 500},
        "uq": {"alpha": 0.05, "gamma": 0.05, "prior_convention": "model"},
        "calibration": {"runs": 0},
        "output": {"dir": "out"},
    },
    "coverage": {
        "problem": {"operator": "toy", "epsilon": 0.05},
        "prior": {"b2": 4.0, "mean": "ones"},
        "noise": {"variance": 1.0},
        "control": {"mu": [0.5, 1.0]},
        "truth": {"theta": [1.0, 2.0]},
        "ensemble": {"master_seed": 0},
        "coverage": {"M": 30, "replicates": 10_000},
        "uq": {"alpha": 0.05, "gamma": 0.05,
               "functionals": [{"label": "total", "weights": [1.0, 1.0], "include_control": True}]},
        "output": {"dir": "out"},
    },
}


# ------------------------------------------------------------------ config

def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(cfg: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; ``value`` is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
        node = nxt
    node[parts[-1]] = value


def load_config(command: str, path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS.get(command, {}))
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = deep_merge(cfg, user)
    for a in overrides:
        set_dotted(cfg, a)
    return cfg


def _section(cfg, name) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return sec


def _level(x, name):
    try:
        x = float(x)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a number") from exc
    if not 0.0 < x < 1.0:
        raise ConfigError(f"{name} must lie in (0, 1), got {x}")
    return x


# ---------------------------------------------------------------- problems

def seasonal_control(cells: int, periods: int) -> np.ndarray:
    """Positive synthetic control flux, index ``t * cells + i``.

    Magnitude grows with the cell index and peaks mid-series, so some
    periods carry much weaker flux than others.
    """
    t = np.arange(periods)[:, None]
    i = np.arange(cells)[None, :]
    shape = 0.3 + np.sin(np.pi * (t + 0.5) / periods) ** 2
    scale = 1.0 + 0.5 * i / max(cells - 1, 1)
    return (shape * scale).ravel()


def default_areas(cells: int) -> np.ndarray:
    lat = np.linspace(-60.0, 60.0, cells)
    return np.cos(np.deg2rad(lat))


def aggregate_weights(m: int, cells: int, areas, time_ranges) -> np.ndarray:
    """Area-weighted, uniformly time-weighted mean over the listed periods.

    Parameter index is ``t * cells + i``; ``time_ranges`` is a list of
    ``[start, stop)`` period ranges that must not overlap.
    """
    areas = np.asarray(areas, dtype=np.float64)
    if areas.shape != (cells,) or np.any(areas <= 0):
        raise ConfigError("areas must be positive, one per cell")
    if m % cells:
        raise ConfigError(f"m={m} is not a multiple of cells={cells}")
    periods = m // cells
    used = set()
    for lo, hi in time_ranges:
        if not 0 <= lo < hi <= periods:
            raise ConfigError(f"time range [{lo}, {hi}) outside [0, {periods})")
        span = set(range(lo, hi))
        if used & span:
            raise ConfigError("time ranges overlap")
        used |= span
    h = np.zeros(m)
    for t in sorted(used):
        h[t * cells:(t + 1) * cells] = areas / areas.sum() / len(used)
    return h


def build_problem(cfg: dict):
    """Return ``(op, prior, noise, mu)`` from the config."""
    prob = _section(cfg, "problem")
    kind = prob.get("operator", "toy")
    grid = _section(cfg, "grid")
    try:
        if kind == "toy":
            op = toy_operator(float(prob.get("epsilon", 0.05)))
        elif kind == "synthetic":
            m = int(prob.get("m", int(grid.get("cells", 6)) * int(grid.get("periods", 8))))
            op = synthetic_operator(m, int(prob.get("n", 200)), float(prob.get("smoothness", 1.5)),
                                    int(prob.get("operator_seed", 0)))
        elif kind == "file":
            if "path" not in prob:
                raise ConfigError("problem.path is required for a file operator")
            op = ForwardOperator.from_matrix(load_matrix(prob["path"]), offset=prob.get("offset"))
        else:
            raise ConfigError(f"unknown operator kind {kind!r}")
        if prob.get("offset") is not None and kind != "file":
            op = ForwardOperator.from_matrix(op.matrix, offset=prob["offset"], meta=op.meta)

        ctrl = _section(cfg, "control").get("mu", "ones")
        if ctrl == "ones":
            mu = np.ones(op.m)
        elif ctrl == "seasonal":
            cells = int(grid.get("cells", 6))
            mu = seasonal_control(cells, op.m // cells)
        elif isinstance(ctrl, dict) and "file" in ctrl:
            mu = np.loadtxt(ctrl["file"], delimiter=",", ndmin=1)
        else:
            mu = np.asarray(ctrl, dtype=np.float64)
        if mu.shape != (op.m,):
            raise ConfigError(f"control has {mu.size} entries, operator has m={op.m}")

        pr = _section(cfg, "prior")
        mean = pr.get("mean", "ones")
        mean = np.ones(op.m) if mean == "ones" else np.asarray(mean, dtype=np.float64)
        prior = PriorSpec(mean, float(pr.get("b2", 1.0)))

        nz = _section(cfg, "noise")
        if "variances" in nz:
            noise = NoiseSpec(nz["variances"])
        else:
            noise = NoiseSpec.scalar(float(nz.get("variance", 1.0)), op.n)
        if prior.m != op.m or noise.n != op.n:
            raise ConfigError("prior/noise dimensions do not match the operator")
    except (ValueError, TypeError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return op, prior, noise, mu


def truth_scaling(cfg: dict, op: ForwardOperator, mu) -> np.ndarray:
    tr = _section(cfg, "truth")
    if "theta" in tr:
        return np.asarray(tr["theta"], dtype=np.float64) / mu
    s = tr.get("scaling", "ones")
    return np.ones(op.m) if s == "ones" else np.asarray(s, dtype=np.float64)


def observations(cfg: dict, op: ForwardOperator, noise: NoiseSpec, mu, replicate: int = 0) -> np.ndarray:
    """Debiased observation vector: given values, or synthesized from the truth."""
    obs = _section(cfg, "observations")
    if "values" in obs:
        return debias_observations(obs["values"], op)
    seed = int(_section(cfg, "ensemble").get("master_seed", 0))
    eps = stream_normals(seed, PURPOSE_OBSERVATIONS, [replicate], op.n)[0]
    return op.apply(truth_scaling(cfg, op, mu) * mu) + np.sqrt(noise.variances) * eps


def solver_config(cfg: dict) -> SolverConfig:
    s = _section(cfg, "solver")
    return SolverConfig(memory=int(s.get("memory", 10)), grad_tol=float(s.get("grad_tol", 1e-9)),
                        max_iter=int(s.get("max_iter", 500)))


def ensemble_config(cfg: dict, op, prior, noise, mu, **over) -> EnsembleConfig:
    e = _section(cfg, "ensemble")
    kw = dict(M=int(e.get("M", 60)), master_seed=int(e.get("master_seed", 0)), operator=op,
              prior=prior, noise=noise, mu=mu, solver=e.get("solver", "analytic"),
              workers=int(e.get("workers", 1)), solver_config=solver_config(cfg),
              max_failure_fraction=float(e.get("max_failure_fraction", 0.0)),
              exclude_failed=bool(e.get("exclude_failed", False)))
    kw.update(over)
    try:
        return EnsembleConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def functional_specs(cfg: dict, m: int) -> list:
    """Functionals from ``uq.functionals``; synthetic runs default to one per period."""
    uq = _section(cfg, "uq")
    grid = _section(cfg, "grid")
    items = uq.get("functionals")
    if items is None:
        cells = int(grid.get("cells", 1))
        periods = m // cells
        items = [{"label": f"period-{t}", "aggregate": {"time_ranges": [[t, t + 1]]}}
                 for t in range(periods)]
    specs = []
    for it in items:
        label = str(it.get("label", f"f{len(specs)}"))
        if "weights" in it:
            w = np.asarray(it["weights"], dtype=np.float64)
            specs.append(FunctionalSpec(w, bool(it.get("include_control", False)), label))
        elif "aggregate" in it:
            ag = it["aggregate"]
            cells = int(ag.get("cells", grid.get("cells", 1)))
            areas = ag.get("areas", grid.get("areas")) or default_areas(cells)
            w = aggregate_weights(m, cells, areas, ag["time_ranges"])
            specs.append(FunctionalSpec(w, bool(it.get("include_control", True)), label))
        else:
            raise ConfigError(f"functional {label!r} needs weights or aggregate")
        if len(specs[-1].weights) != m:
            raise ConfigError(f"functional {label!r} has wrong length")
    return specs


def central_inversion(op, noise, prior, mu, y, cfg: dict, solver: str = "variational"):
    """MAP estimate for the actual prior mean and observations."""
    if solver == "analytic":
        fac = PrecisionFactor(op, noise, prior, mu)
        rhs = op.adjoint(y / noise.variances) * mu + prior.mean / prior.variance
        return fac.solve(rhs), None
    problem = VariationalProblem(op, noise, prior, mu, prior.mean, y)
    rep = minimize(prior.mean, problem, solver_config(cfg))
    return rep.solution, rep


# ---------------------------------------------------------------- drivers

def toy2d(cfg: dict, created=None) -> dict:
    op, prior, noise, mu = build_problem(cfg)
    ecfg = ensemble_config(cfg, op, prior, noise, mu)
    warnings = []
    if ecfg.M < 30:
        warnings.append(f"M={ecfg.M} is very small; the empirical covariance has high variance")
    sigma = posterior_covariance(op, noise, prior, mu)
    sigma_map = map_estimator_covariance(op, noise, prior, mu)
    post = GaussianPosterior(np.zeros(op.m), sigma)
    gamma_mat = flux_posterior(post, mu).covariance
    cov_theta = sigma_map * np.outer(mu, mu)
    store = run_ensemble(ecfg, created=created)
    sigma_hat = empirical_covariance(store)
    theta = flux_members(store)
    dev = theta - theta.mean(axis=0)
    gamma_hat = dev.T @ dev / (store.M - 1)
    rel = float(np.linalg.norm(sigma_hat - sigma, 2) / np.linalg.norm(sigma, 2))
    return {
        "Sigma": sigma.tolist(), "Sigma_cMAP": sigma_map.tolist(), "Sigma_hat": sigma_hat.tolist(),
        "Gamma": gamma_mat.tolist(), "Cov_theta": cov_theta.tolist(),
        "Gamma_hat": gamma_hat.tolist(),
        "relative_error": rel, "bound": TOY_REL_ERROR_BOUND,
        "within_bound": rel <= TOY_REL_ERROR_BOUND,
        "bound_applies": ecfg.M == 1_000_000 and op.m == 2,
        "M": ecfg.M, "master_seed": ecfg.master_seed, "solver": ecfg.solver,
        "warnings": warnings, "_store": store,
    }


def factors_table(M_list, alpha: float = 0.05) -> list:
    rows = []
    for M in M_list:
        if int(M) != M or M < 2:
            raise ConfigError(f"every M must be an integer >= 2, got {M}")
        L, R = inflation_deflation_factors(int(M), alpha)
        rows.append({"M": int(M), "L": L, "R": R})
    return rows


def synthetic_inversion(cfg: dict, created=None) -> dict:
    """Central inversion, ensemble, per-functional reports and cross-checks."""
    op, prior, noise, mu = build_problem(cfg)
    uq = _section(cfg, "uq")
    alpha, gamma = _level(uq.get("alpha", 0.05), "alpha"), _level(uq.get("gamma", 0.05), "gamma")
    convention = uq.get("prior_convention", "model")
    specs = functional_specs(cfg, op.m)
    y = observations(cfg, op, noise, mu)
    ecfg = ensemble_config(cfg, op, prior, noise, mu)

    c_central, central_rep = central_inversion(op, noise, prior, mu, y, cfg, "variational"
                                               if ecfg.solver == "variational" else "analytic")
    store = run_ensemble(ecfg, created=created)
    truth = truth_scaling(cfg, op, mu)
    reports = []
    for spec in specs:
        phi_map = float(spec.effective_weights(mu) @ c_central)
        rep = functional_report(store, spec, phi_map, alpha, gamma, prior=prior,
                                prior_convention=convention)
        rep.extra["phi_truth"] = float(spec.effective_weights(mu) @ truth)
        reports.append(rep)

    result = {"reports": reports, "_store": store, "M": ecfg.M,
              "operator": {k: v for k, v in op.meta.items()},
              "central_converged": None if central_rep is None else central_rep.converged}
    if op.m <= DENSE_CAP and op.is_explicit:
        sigma = posterior_covariance(op, noise, prior, mu)
        c_exact, _ = central_inversion(op, noise, prior, mu, y, cfg, "analytic")
        result["central_rel_error"] = float(np.linalg.norm(c_central - c_exact) / np.linalg.norm(c_exact))
        for spec, rep in zip(specs, reports):
            h = spec.effective_weights(mu)
            rep.extra["sigma_exact"] = float(math.sqrt(h @ sigma @ h))
        if ecfg.solver == "variational":
            analytic = run_ensemble(ensemble_config(cfg, op, prior, noise, mu, solver="analytic"),
                                    created=created)
            diff = np.linalg.norm(store.members - analytic.members, axis=1)
            scale = np.linalg.norm(analytic.members, axis=1)
            result["cross_path_max_rel_error"] = float(np.max(diff / scale))
    return result


def synthetic_calibration(cfg: dict, runs: int) -> dict:
    """Repeat the synthetic study with fresh noise and ensemble seeds (analytic path).

    For each functional reports how often the variance CI covers the exact
    ``h^T Sigma h`` and how often the central MAP functional lies within
    ``3 sigma_hat`` of the truth.
    """
    op, prior, noise, mu = build_problem(cfg)
    uq = _section(cfg, "uq")
    alpha = _level(uq.get("alpha", 0.05), "alpha")
    specs = functional_specs(cfg, op.m)
    sigma = posterior_covariance(op, noise, prior, mu)
    truth = truth_scaling(cfg, op, mu)
    base_seed = int(_section(cfg, "ensemble").get("master_seed", 0))
    H = np.array([s.effective_weights(mu) for s in specs])
    exact_var = np.einsum("ij,jk,ik->i", H, sigma, H)
    cover = np.zeros(len(specs), dtype=int)
    within = np.zeros(len(specs), dtype=int)
    for r in range(runs):
        run_cfg = deep_merge(cfg, {"ensemble": {"master_seed": base_seed + 1 + r}})
        y = observations(run_cfg, op, noise, mu)
        c_central, _ = central_inversion(op, noise, prior, mu, y, run_cfg, "analytic")
        store = run_ensemble(ensemble_config(run_cfg, op, prior, noise, mu, solver="analytic"),
                             created="calibration")
        for j, spec in enumerate(specs):
            s2 = empirical_functional_variance(functional_values(store, spec))
            lo, hi = variance_confidence_interval(s2, store.M, alpha)
            cover[j] += lo <= exact_var[j] <= hi
            within[j] += abs(H[j] @ (c_central - truth)) <= 3.0 * math.sqrt(s2)
    return {"runs": runs, "labels": [s.label for s in specs],
            "variance_ci_coverage": (cover / runs).tolist(),
            "within_3sigma": (within / runs).tolist(),
            "pooled_variance_ci_coverage": float(cover.sum() / (runs * len(specs)))}


def coverage(cfg: dict) -> dict:
    """Empirical coverage of the variance/SD intervals and endpoint brackets.

    ``replicates`` independent ensembles of ``M`` members are carved out of
    one analytic ensemble of ``replicates * M`` members (members are i.i.d.).
    """
    op, prior, noise, mu = build_problem(cfg)
    uq = _section(cfg, "uq")
    cov_sec = _section(cfg, "coverage")
    alpha, gamma = _level(uq.get("alpha", 0.05), "alpha"), _level(uq.get("gamma", 0.05), "gamma")
    M, N = int(cov_sec.get("M", 30)), int(cov_sec.get("replicates", 10_000))
    if M < 2 or N < 1:
        raise ConfigError("coverage needs M >= 2 and replicates >= 1")
    spec = functional_specs(cfg, op.m)[0]
    h = spec.effective_weights(mu)
    sigma = posterior_covariance(op, noise, prior, mu)
    true_var = float(h @ sigma @ h)
    true_sd = math.sqrt(true_var)

    store = run_ensemble(ensemble_config(cfg, op, prior, noise, mu, M=M * N, solver="analytic"),
                         created="coverage")
    phis = functional_values(store, spec).reshape(N, M)
    dev = phis - phis.mean(axis=1, keepdims=True)
    s2 = np.einsum("ij,ij->i", dev, dev) / (M - 1)
    s = np.sqrt(s2)
    L, R = inflation_deflation_factors(M, alpha)
    # (M-1) s2 / chi2 quantiles, written through the factors
    var_lo, var_hi = s2 * L ** 2, s2 * R ** 2
    var_cov = (var_lo <= true_var) & (true_var <= var_hi)
    sd_cov = (s * L <= true_sd) & (true_sd <= s * R)

    y = observations(cfg, op, noise, mu)
    c_central, _ = central_inversion(op, noise, prior, mu, y, cfg, "analytic")
    phi_map = float(h @ c_central)
    z = normal_quantile(1.0 - gamma / 2.0)
    true_lo, true_hi = phi_map - z * true_sd, phi_map + z * true_sd
    end_cov = ((phi_map - z * s * R <= true_lo) & (true_lo <= phi_map - z * s * L)
               & (phi_map + z * s * L <= true_hi) & (true_hi <= phi_map + z * s * R))

    pivots = (M - 1) * s2 / true_var
    ks = stats.kstest(pivots, stats.chi2(M - 1).cdf)

    def summary(hits):
        p = float(hits.mean())
        return {"coverage": p, "stderr": math.sqrt(p * (1 - p) / N)}

    return {"M": M, "replicates": N, "alpha": alpha, "gamma": gamma, "true_variance": true_var,
            "variance_ci": summary(var_cov), "sd_ci": summary(sd_cov),
            "endpoint_brackets": summary(end_cov),
            "pivot_ks": {"statistic": float(ks.statistic), "pvalue": float(ks.pvalue)},
            "_pivots": pivots}
