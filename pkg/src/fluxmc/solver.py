"""
Variational (4D-Var) solver: cost, adjoint gradient and an L-BFGS minimizer.

Only ``op.apply`` and ``op.adjoint`` are used, so this path works for
matrix-free operators. The cost (constant dropped) is

    F(c) = |c - c_k|^2 / (2 b2) + (y_k - A(c*mu))^T R^-1 (y_k - A(c*mu)) / 2

with gradient ``(c - c_k)/b2 - (A^T R^-1 (y_k - A(c*mu))) * mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError
from .forward import ForwardOperator, NoiseSpec, PriorSpec
from .hadamard import as_vector, scaled_adjoint_apply, scaled_apply


@dataclass(frozen=True)
class CostEvaluation:
    value: float
    gradient: np.ndarray


@dataclass
class SolverReport:
    solution: np.ndarray
    iterations: int
    final_gradient_norm: float
    converged: bool
    cost_trace: list = field(default_factory=list)
    evaluations: int = 0
    message: str = ""


@dataclass(frozen=True)
class SolverConfig:
    memory: int = 10
    grad_tol: float = 1e-9
    max_iter: int = 500
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 40


def cost_and_gradient(c, prior: PriorSpec, prior_mean_k, y_k, noise: NoiseSpec,
                      op: ForwardOperator, mu) -> CostEvaluation:
    """Evaluate the 4D-Var cost and its gradient at ``c``.

    One forward and one adjoint application per call. ``prior`` contributes
    only its variance; the prior mean for this evaluation is ``prior_mean_k``.
    """
    c = as_vector(c, "c", op.m)
    ck = as_vector(prior_mean_k, "prior_mean_k", op.m)
    y = as_vector(y_k, "y_k", op.n)
    if noise.n != op.n:
        raise DimensionError("noise does not match operator")
    dc = c - ck
    resid = y - scaled_apply(op, mu, c)
    wres = resid / noise.variances
    value = 0.5 * float(dc @ dc) / prior.variance + 0.5 * float(resid @ wres)
    grad = dc / prior.variance - scaled_adjoint_apply(op, mu, wres)
    return CostEvaluation(value, grad)


@dataclass(frozen=True)
class VariationalProblem:
    """Callable closure ``c -> CostEvaluation`` for one (prior mean, observation) pair."""

    op: ForwardOperator
    noise: NoiseSpec
    prior: PriorSpec
    mu: np.ndarray
    prior_mean_k: np.ndarray
    y_k: np.ndarray

    def __call__(self, c) -> CostEvaluation:
        return cost_and_gradient(c, self.prior, self.prior_mean_k, self.y_k,
                                 self.noise, self.op, self.mu)


# ------------------------------------------------------------- line search

def _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
    d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
    disc = d1 * d1 - d_lo * d_hi
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), a_hi - a_lo)
    denom = d_hi - d_lo + 2.0 * d2
    if denom == 0:
        return None
    return a_hi - (a_hi - a_lo) * (d_hi + d2 - d1) / denom


def _line_search(fun, x, f0, g0, p, alpha0, cfg: SolverConfig):
    """Strong-Wolfe search along ``p``.

    Near the optimum the change in ``F`` drops below round-off, so the
    sufficient-decrease test also accepts the approximate Wolfe condition
    ``phi'(a) <= (1 - 2 c1) |phi'(0)|``, which for a quadratic is equivalent
    to sufficient decrease but is evaluated from gradients only.

    Returns ``(alpha, evaluation, n_evals)`` or ``(None, None, n_evals)``.
    """
    d0 = float(g0 @ p)
    c1, c2 = cfg.c1, cfg.c2
    f_tol = 1e-12 * max(abs(f0), 1e-300)
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        ev = fun(x + a * p)
        return ev, float(ev.gradient @ p)

    def decrease_ok(a, f, d):
        if f <= f0 + c1 * a * d0:
            return True
        return f <= f0 + f_tol and d <= (1.0 - 2.0 * c1) * abs(d0)

    def curvature_ok(d):
        return abs(d) <= -c2 * d0

    def zoom(lo, hi):
        a_lo, ev_lo, dd_lo = lo
        a_hi, ev_hi, dd_hi = hi
        while evals < cfg.max_line_search:
            width = a_hi - a_lo
            a = _cubic_min(a_lo, ev_lo.value, dd_lo, a_hi, ev_hi.value, dd_hi)
            lo_b, hi_b = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            if a is None or not (lo_b <= a <= hi_b):
                a = 0.5 * (a_lo + a_hi)
            ev, d = phi(a)
            if not decrease_ok(a, ev.value, d) or (ev.value >= ev_lo.value and not curvature_ok(d)):
                a_hi, ev_hi, dd_hi = a, ev, d
            else:
                if curvature_ok(d):
                    return a, ev
                if d * (a_hi - a_lo) >= 0:
                    a_hi, ev_hi, dd_hi = a_lo, ev_lo, dd_lo
                a_lo, ev_lo, dd_lo = a, ev, d
            if abs(a_hi - a_lo) <= 1e-16 * max(1.0, abs(a_lo)):
                break
        return None, None

    prev = (0.0, CostEvaluation(f0, g0), d0)
    a = alpha0
    first = True
    while evals < cfg.max_line_search:
        ev, d = phi(a)
        if not np.isfinite(ev.value):
            a *= 0.5
            continue
        if not decrease_ok(a, ev.value, d) or (not first and ev.value >= prev[1].value
                                                and not curvature_ok(d)):
            res = zoom(prev, (a, ev, d))
            return res[0], res[1], evals
        if curvature_ok(d):
            return a, ev, evals
        if d >= 0:
            res = zoom((a, ev, d), prev)
            return res[0], res[1], evals
        prev = (a, ev, d)
        a *= 2.0
        first = False
    return None, None, evals


# --------------------------------------------------------------- L-BFGS

def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho))
        q -= a * y
    s, y = s_hist[-1], y_hist[-1]
    q *= float(s @ y) / float(y @ y)
    for (a, rho), s, y in zip(reversed(alphas), s_hist, y_hist):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def minimize(start, problem: Callable[[np.ndarray], CostEvaluation],
             config: SolverConfig | None = None, **overrides) -> SolverReport:
    """Unconstrained L-BFGS.

    Parameters
    ----------
    start : array_like
        Initial iterate.
    problem : callable
        Returns a :class:`CostEvaluation` for a point.
    config : SolverConfig, optional
        ``memory``, ``grad_tol`` and ``max_iter`` can also be passed as
        keyword overrides.

    Returns
    -------
    SolverReport
        ``converged`` is set when the gradient infinity norm drops to
        ``grad_tol * max(1, |g(start)|_inf)``. Hitting ``max_iter`` or a line
        search failure returns a non-converged report, never raises.
    """
    cfg = config or SolverConfig()
    if overrides:
        cfg = SolverConfig(**{**cfg.__dict__, **overrides})
    x = np.array(start, dtype=np.float64)
    ev = problem(x)
    f, g = ev.value, ev.gradient
    evals = 1
    tol = cfg.grad_tol * max(1.0, float(np.max(np.abs(g))))
    trace = [f]
    s_hist: list = []
    y_hist: list = []
    message = "max_iter reached"
    converged = False
    it = 0
    while True:
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            converged, message = True, "gradient tolerance reached"
            break
        if it >= cfg.max_iter:
            break
        if s_hist:
            p = -_two_loop(g, s_hist, y_hist)
            alpha0 = 1.0
            if float(g @ p) >= 0:
                s_hist.clear(); y_hist.clear()
        if not s_hist:
            p = -g
            alpha0 = min(1.0, 1.0 / float(np.linalg.norm(g)))
        alpha, new, n_ev = _line_search(problem, x, f, g, p, alpha0, cfg)
        evals += n_ev
        if alpha is None:
            if s_hist:
                s_hist.clear(); y_hist.clear()
                continue
            message = "line search failed"
            break
        s = alpha * p
        yv = new.gradient - g
        sy = float(s @ yv)
        if sy > 1e-14 * float(np.linalg.norm(s) * np.linalg.norm(yv)):
            s_hist.append(s); y_hist.append(yv)
            if len(s_hist) > cfg.memory:
                s_hist.pop(0); y_hist.pop(0)
        x = x + s
        f, g = new.value, new.gradient
        trace.append(f)
        it += 1
    return SolverReport(solution=x, iterations=it, final_gradient_norm=float(np.max(np.abs(g))),
                        converged=converged, cost_trace=trace, evaluations=evals, message=message)
