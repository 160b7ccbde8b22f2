"""
Element-wise (Hadamard) product algebra and column-scaled operators.

The forward model always enters as ``A(c * mu)``: the scaling factors ``c``
multiply the control quantity ``mu`` element-wise before the linear map is
applied. Writing ``A_mu`` for ``A`` with column ``j`` multiplied by ``mu[j]``,

    A(c * mu)         == A_mu @ c
    A_mu.T @ w        == (A.T @ w) * mu
    A_mu.T M A_mu     == (A.T M A) * outer(mu, mu)

The helpers here implement those identities without ever forming ``A_mu``
unless explicitly asked to (``materialize_scaled``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DefinitenessError, DimensionError


def as_vector(x, name: str = "vector", length: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float64 array, optionally of fixed length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def hadamard(a, b) -> np.ndarray:
    """Element-wise product of two equal-length vectors."""
    a = as_vector(a, "a")
    b = as_vector(b, "b", len(a))
    return a * b


def _maps(A: Any):
    """Return (apply, adjoint, m, n) for a dense matrix or an operator-like."""
    if hasattr(A, "apply") and hasattr(A, "adjoint"):
        return A.apply, A.adjoint, A.m, A.n
    mat = as_matrix(A, "A")
    return (lambda v: mat @ v), (lambda w: mat.T @ w), mat.shape[1], mat.shape[0]


def scaled_apply(A, mu, c) -> np.ndarray:
    """Compute ``A(c * mu)``, i.e. ``A_mu @ c``.

    ``A`` is either a dense ``(n, m)`` array or any object exposing
    ``apply``/``adjoint`` and the dimensions ``m``/``n`` (such as
    :class:`fluxmc.forward.ForwardOperator`).
    """
    apply, _, m, _ = _maps(A)
    mu = as_vector(mu, "mu", m)
    c = as_vector(c, "c", m)
    return np.asarray(apply(c * mu), dtype=np.float64)


def scaled_adjoint_apply(A, mu, w) -> np.ndarray:
    """Compute ``A_mu.T @ w`` as ``(A.T @ w) * mu``."""
    _, adjoint, m, n = _maps(A)
    mu = as_vector(mu, "mu", m)
    w = as_vector(w, "w", n)
    return np.asarray(adjoint(w), dtype=np.float64) * mu


def materialize_scaled(A, mu) -> np.ndarray:
    """Explicit ``A_mu`` with ``A_mu[i, j] = A[i, j] * mu[j]``."""
    mat = as_matrix(A, "A")
    mu = as_vector(mu, "mu", mat.shape[1])
    return mat * mu[np.newaxis, :]


def scaled_gram(A, weight_diag, mu) -> np.ndarray:
    """Weighted Gram matrix of the scaled operator.

    Parameters
    ----------
    A : (n, m) array_like
        Explicit forward matrix.
    weight_diag : (n,) array_like
        Diagonal of the positive-definite weight ``W`` (for the posterior
        this is ``1 / noise_variance``).
    mu : (m,) array_like
        Column scaling.

    Returns
    -------
    (m, m) ndarray
        ``(A.T W A) * outer(mu, mu)``, which equals ``A_mu.T W A_mu``.
        The result is exactly symmetric.
    """
    mat = as_matrix(A, "A")
    n, m = mat.shape
    w = as_vector(weight_diag, "weight_diag", n)
    if np.any(w <= 0.0):
        raise DefinitenessError("weight diagonal must be strictly positive")
    mu = as_vector(mu, "mu", m)
    sw = np.sqrt(w)
    half = mat * sw[:, np.newaxis]
    gram = half.T @ half
    gram = 0.5 * (gram + gram.T)
    return gram * np.outer(mu, mu)


@dataclass(frozen=True)
class ScaledOperatorView:
    """Lazy ``A_mu``: composes the base operator with a column scaling.

    Never forms ``A_mu``; ``apply`` and ``adjoint`` each cost one call to the
    base operator plus an element-wise product.
    """

    base: Any
    scale: np.ndarray

    def __post_init__(self):
        _, _, m, _ = _maps(self.base)
        object.__setattr__(self, "scale", as_vector(self.scale, "scale", m))

    @property
    def m(self) -> int:
        return len(self.scale)

    @property
    def n(self) -> int:
        return _maps(self.base)[3]

    def apply(self, c) -> np.ndarray:
        return scaled_apply(self.base, self.scale, c)

    def adjoint(self, w) -> np.ndarray:
        return scaled_adjoint_apply(self.base, self.scale, w)
