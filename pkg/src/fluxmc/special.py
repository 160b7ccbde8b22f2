"""
Normal and chi-squared distribution functions used for interval bounds.

The chi-squared CDF is the regularized lower incomplete gamma
``P(dof/2, x/2)``, evaluated by its power series below ``x = dof`` and by a
Lentz continued fraction for the upper tail above. Both share a prefactor
``x^a e^-x / Gamma(a)`` computed in a form that keeps relative accuracy for
large ``a`` (where ``a ln x - x - lgamma(a)`` cancels badly).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

_TINY = 1e-300
_EPS = 1e-17

# rational approximation to the normal quantile (Acklam); ~1e-9 relative,
# polished by a Halley step below
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _poly(coef, x):
    out = np.zeros_like(x) + coef[0]
    for c in coef[1:]:
        out = out * x + c
    return out


def _lower_half_quantile(p: np.ndarray) -> np.ndarray:
    """Quantile for ``0 < p <= 0.5`` (result <= 0)."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    if np.any(tail):
        q = np.sqrt(-2.0 * np.log(p[tail]))
        x[tail] = _poly(_C, q) / (_poly(_D, q) * q + 1.0)
    mid = ~tail
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        x[mid] = _poly(_A, r) * q / (_poly(_B, r) * r + 1.0)
    # Halley refinement against Phi(x) = erfc(-x/sqrt2)/2
    e = 0.5 * erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_quantile(p):
    """Standard normal quantile, vectorized over ``p`` in (0, 1).

    Antisymmetric by construction: the upper half is computed as
    ``-normal_quantile(1 - p)``.
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    flat = np.atleast_1d(arr).ravel()
    upper = flat > 0.5
    lower_p = np.where(upper, 1.0 - flat, flat)
    x = _lower_half_quantile(lower_p)
    x = np.where(upper, -x, x)
    x = np.where(flat == 0.5, 0.0, x)
    if arr.ndim == 0:
        return float(x[0])
    return x.reshape(arr.shape)


def normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


# ---------------------------------------------------------- incomplete gamma

def _log1pmx(t: float) -> float:
    """``log(1 + t) - t`` for ``|t| <= 1/4``."""
    # alternating series  -t^2/2 + t^3/3 - ...
    term = t
    total = 0.0
    k = 2
    while True:
        term *= -t
        add = term / k
        total += add
        if abs(add) <= 1e-17 * abs(total):
            return total
        k += 1


def _stirling_error(a: float) -> float:
    """``lgamma(a) - ((a - 1/2) ln a - a + ln(2 pi)/2)``."""
    if a < 15.0:
        return math.lgamma(a) - ((a - 0.5) * math.log(a) - a + 0.5 * math.log(2.0 * math.pi))
    a2 = a * a
    return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - (1.0 / 1680.0) / a2) / a2) / a2) / a


def _log_prefactor(a: float, x: float) -> float:
    """``log(x^a e^-x / Gamma(a))``."""
    if a < 1.0:
        return a * math.log(x) - x - math.lgamma(a)
    t = (x - a) / a
    # a (log(x/a) - t); the series form only near x = a, where the two terms cancel
    core = a * _log1pmx(t) if abs(t) <= 0.25 else a * math.log(x / a) - (x - a)
    return core + 0.5 * math.log(a / (2.0 * math.pi)) - _stirling_error(a)


def _series_p(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0
    total = 1.0
    k = 1
    while True:
        term *= x / (a + k)
        total += term
        if term <= _EPS * total:
            break
        k += 1
        if k > 10_000_000:
            raise ArithmeticError("incomplete gamma series failed to converge")
    return math.exp(_log_prefactor(a, x)) / a * total


def _cf_q(a: float, x: float) -> float:
    # modified Lentz on Q(a, x) = x^a e^-x / Gamma(a) * 1/(x+1-a- 1(1-a)/(x+3-a- ...))
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b if b != 0 else 1.0 / _TINY
    h = d
    i = 1
    while True:
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) <= _EPS:
            break
        i += 1
        if i > 10_000_000:
            raise ArithmeticError("incomplete gamma continued fraction failed to converge")
    return math.exp(_log_prefactor(a, x)) * h


def gamma_pq(a: float, x: float) -> tuple[float, float]:
    """Regularized incomplete gammas ``(P(a, x), Q(a, x))``."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 0.0, 1.0
    if x < a + 1.0:
        p = _series_p(a, x)
        return p, 1.0 - p
    q = _cf_q(a, x)
    return 1.0 - q, q


def chi2_cdf(x: float, dof: float) -> float:
    return gamma_pq(0.5 * dof, 0.5 * x)[0]


def chi2_sf(x: float, dof: float) -> float:
    return gamma_pq(0.5 * dof, 0.5 * x)[1]


def chi2_pdf(x: float, dof: float) -> float:
    if x <= 0:
        return 0.0
    a = 0.5 * dof
    return math.exp(_log_prefactor(a, 0.5 * x)) / x


def chi2_quantile(dof: float, p: float) -> float:
    """Chi-squared quantile by safeguarded Newton iteration.

    Starts from the Wilson-Hilferty approximation and iterates on whichever
    tail (``P`` or ``Q``) is smaller, so upper quantiles keep full relative
    precision. Converges to 1e-12 relative in ``x``.
    """
    if not dof >= 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie strictly inside (0, 1)")
    use_upper = p > 0.5
    target = 1.0 - p if use_upper else p
    z = float(normal_quantile(p))
    h = 2.0 / (9.0 * dof)
    x = dof * max(1.0 - h + z * math.sqrt(h), 1e-3) ** 3
    lo, hi = 0.0, math.inf
    for _ in range(200):
        pp, qq = gamma_pq(0.5 * dof, 0.5 * x)
        f = (target - qq) if use_upper else (pp - target)
        # f is increasing in x for both branches
        if f > 0:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        dens = chi2_pdf(x, dof)
        step = f / dens if dens > 0 else math.inf
        new = x - step
        if not (lo < new < hi) or not math.isfinite(new):
            new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * x
        if abs(new - x) <= 1e-13 * new:
            return new
        x = new
    raise ArithmeticError(f"chi2 quantile did not converge for dof={dof}, p={p}")
