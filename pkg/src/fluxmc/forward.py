"""
Observation operator, prior and noise specifications.

The affine observation model is ``y_tilde = A(c * mu) + z + eps`` with
``eps ~ N(0, R)``. ``ForwardOperator`` holds the linear part ``A`` (an explicit
matrix, or a pair of user callables for the forward map and its adjoint)
together with the offset ``z``.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _io
from .errors import AdjointMismatchError, DimensionError, MetadataError, UnsupportedPathError
from .hadamard import as_matrix, as_vector

MATRIX_MAGIC = "FLUXMC-MAT"
MATRIX_VERSION = 1


class ForwardOperator:
    """Linear forward model ``A: R^m -> R^n`` with adjoint and affine offset.

    Build with :meth:`from_matrix` or :meth:`from_callables`. Instances are
    immutable. Matrix-free operators are checked at construction with
    randomized adjoint probes, ``<A v, w> == <v, A^T w>``.

    Set ``reentrant=False`` for callables that must not run concurrently;
    calls are then serialized through a lock.
    """

    def __init__(self, *, matrix=None, apply=None, adjoint=None, m=None, n=None,
                 offset=None, reentrant=True, meta=None):
        if matrix is not None:
            mat = as_matrix(matrix, "matrix").copy()
            mat.setflags(write=False)
            self._matrix = mat
            n, m = mat.shape
            self._apply = lambda v: mat @ v
            self._adjoint = lambda w: mat.T @ w
        else:
            if apply is None or adjoint is None or m is None or n is None:
                raise ValueError("matrix-free operator needs apply, adjoint, m and n")
            self._matrix = None
            self._apply = apply
            self._adjoint = adjoint
        if m < 1 or n < 1:
            raise DimensionError("operator dimensions must be positive")
        self.m = int(m)
        self.n = int(n)
        z = np.zeros(self.n) if offset is None else as_vector(offset, "offset", self.n).copy()
        z.setflags(write=False)
        self.offset = z
        self.reentrant = bool(reentrant)
        self._lock = None if reentrant else threading.Lock()
        self.meta = dict(meta or {})

    @classmethod
    def from_matrix(cls, matrix, offset=None, meta=None) -> "ForwardOperator":
        return cls(matrix=matrix, offset=offset, meta=meta)

    @classmethod
    def from_callables(cls, apply: Callable, adjoint: Callable, m: int, n: int, *,
                       offset=None, reentrant: bool = True, probes: int = 32,
                       rtol: float = 1e-10, seed: int = 0, meta=None) -> "ForwardOperator":
        """Register a black-box operator after checking its adjoint.

        Raises
        ------
        AdjointMismatchError
            If any of ``probes`` random pairs violates adjoint consistency by
            more than ``rtol`` relative to ``|A v| |w|``.
        """
        op = cls(apply=apply, adjoint=adjoint, m=m, n=n, offset=offset,
                 reentrant=reentrant, meta=meta)
        worst = op.adjoint_mismatch(probes=probes, seed=seed)
        if worst > rtol:
            raise AdjointMismatchError(
                f"adjoint inconsistent: relative mismatch {worst:.3e} > {rtol:.1e}")
        return op

    @property
    def is_explicit(self) -> bool:
        return self._matrix is not None

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            raise UnsupportedPathError("operator is matrix-free; no explicit matrix")
        return self._matrix

    def _call(self, fn, x):
        if self._lock is None:
            return fn(x)
        with self._lock:
            return fn(x)

    def apply(self, v) -> np.ndarray:
        v = as_vector(v, "v", self.m)
        out = np.asarray(self._call(self._apply, v), dtype=np.float64)
        if out.shape != (self.n,):
            raise DimensionError(f"apply returned shape {out.shape}, expected ({self.n},)")
        return out

    def adjoint(self, w) -> np.ndarray:
        w = as_vector(w, "w", self.n)
        out = np.asarray(self._call(self._adjoint, w), dtype=np.float64)
        if out.shape != (self.m,):
            raise DimensionError(f"adjoint returned shape {out.shape}, expected ({self.m},)")
        return out

    def adjoint_mismatch(self, probes: int = 32, seed: int = 0) -> float:
        """Largest relative adjoint defect over ``probes`` Gaussian pairs."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(probes):
            v = rng.standard_normal(self.m)
            w = rng.standard_normal(self.n)
            av = self.apply(v)
            lhs = float(av @ w)
            rhs = float(v @ self.adjoint(w))
            scale = max(np.linalg.norm(av) * np.linalg.norm(w),
                        np.linalg.norm(v) * np.linalg.norm(self.adjoint(w)), 1e-300)
            worst = max(worst, abs(lhs - rhs) / scale)
        return worst

    def fingerprint(self) -> str:
        """Short hash identifying the operator (matrix bytes or probe outputs)."""
        h = hashlib.sha256()
        h.update(f"{self.n}x{self.m}".encode())
        if self.is_explicit:
            h.update(np.ascontiguousarray(self._matrix, dtype="<f8").tobytes())
        else:
            rng = np.random.default_rng(20240101)
            for _ in range(3):
                h.update(self.apply(rng.standard_normal(self.m)).astype("<f8").tobytes())
        h.update(self.offset.astype("<f8").tobytes())
        return h.hexdigest()[:16]

    def __repr__(self):
        kind = "explicit" if self.is_explicit else "matrix-free"
        return f"ForwardOperator({kind}, n={self.n}, m={self.m})"


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior ``c ~ N(mean, variance * I)`` on the scaling factors."""

    mean: np.ndarray
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "mean", as_vector(self.mean, "prior mean"))
        v = float(self.variance)
        if not np.isfinite(v) or v <= 0.0:
            raise ValueError(f"prior variance must be positive, got {self.variance}")
        object.__setattr__(self, "variance", v)

    @classmethod
    def unit_mean(cls, m: int, variance: float) -> "PriorSpec":
        return cls(np.ones(m), variance)

    @property
    def m(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal observation-error covariance ``R = diag(variances)``."""

    variances: np.ndarray = field()

    def __post_init__(self):
        v = as_vector(self.variances, "noise variances")
        if np.any(v <= 0.0):
            raise ValueError("noise variances must be strictly positive")
        object.__setattr__(self, "variances", v)

    @classmethod
    def scalar(cls, variance: float, n: int) -> "NoiseSpec":
        return cls(np.full(n, float(variance)))

    @property
    def n(self) -> int:
        return len(self.variances)

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.variances


def debias_observations(y_tilde, op: ForwardOperator) -> np.ndarray:
    """Remove the affine offset: ``y = y_tilde - z``."""
    return as_vector(y_tilde, "y_tilde", op.n) - op.offset


def toy_operator(epsilon: float) -> ForwardOperator:
    """2x2 mixing matrix ``[[1 - eps, eps], [eps, 1 - eps]]`` with zero offset."""
    eps = float(epsilon)
    if not eps > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    mat = np.array([[1.0 - eps, eps], [eps, 1.0 - eps]])
    return ForwardOperator.from_matrix(mat, meta={"kind": "toy", "epsilon": eps})


def synthetic_operator(m: int, n: int, smoothness: float = 1.5, seed: int = 0) -> ForwardOperator:
    """Row-stochastic smoothing operator standing in for a transport model.

    The ``m`` parameters sit on a 1-D grid ``0, 1, ..., m-1``. Observation
    ``i`` looks at a Gaussian bump centred near ``i * (m-1)/(n-1)`` (jittered
    by up to a quarter grid cell) whose width is ``smoothness`` grid cells
    times a per-row factor in ``[0.5, 1.5]``. Each row is normalized to sum
    to one, mimicking a column averaging kernel. ``smoothness=0`` gives the
    nearest-cell one-hot rows.

    The condition number of the matrix is stored in ``op.meta``.
    """
    if m < 1 or n < 1:
        raise DimensionError("m and n must be at least 1")
    if smoothness < 0:
        raise ValueError("smoothness must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), m, n]))
    grid = np.arange(m, dtype=np.float64)
    base = np.linspace(0.0, m - 1.0, n) if n > 1 else np.array([(m - 1) / 2.0])
    spacing = (m - 1.0) / (n - 1.0) if n > 1 else 1.0
    jitter = rng.uniform(-0.25, 0.25, size=n) * min(spacing, 1.0)
    centers = np.clip(base + jitter, 0.0, m - 1.0)
    widths = smoothness * rng.uniform(0.5, 1.5, size=n)

    dist = grid[np.newaxis, :] - centers[:, np.newaxis]
    if smoothness == 0:
        mat = np.zeros((n, m))
        mat[np.arange(n), np.argmin(np.abs(dist), axis=1)] = 1.0
    else:
        logw = -0.5 * (dist / widths[:, np.newaxis]) ** 2
        logw -= logw.max(axis=1, keepdims=True)
        mat = np.exp(logw)
        mat /= mat.sum(axis=1, keepdims=True)
    cond = float(np.linalg.cond(mat))
    return ForwardOperator.from_matrix(
        mat, meta={"kind": "synthetic", "smoothness": float(smoothness),
                   "seed": int(seed), "condition_number": cond})


# ---------------------------------------------------------------- matrix I/O

def save_matrix_csv(path, matrix) -> None:
    """One row per line, 17 significant digits in scientific notation."""
    np.savetxt(path, as_matrix(matrix), delimiter=",", fmt="%.17e")


def load_matrix_csv(path) -> np.ndarray:
    mat = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return as_matrix(mat)


def save_matrix_binary(path, matrix) -> None:
    mat = as_matrix(matrix)
    meta = {"rows": mat.shape[0], "cols": mat.shape[1]}
    _io.write_container(path, MATRIX_MAGIC, MATRIX_VERSION, meta, [mat])


def load_matrix_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    meta, line, check, payload = _io.read_header(raw, MATRIX_MAGIC, MATRIX_VERSION)
    try:
        shape = (int(meta["rows"]), int(meta["cols"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MetadataError("matrix header needs integer rows and cols") from exc
    (mat,) = _io.split_payload(line, check, payload, [shape])
    return mat


def load_matrix(path) -> np.ndarray:
    """Load by extension: ``.csv`` is text, anything else the binary container."""
    return load_matrix_csv(path) if str(path).lower().endswith(".csv") else load_matrix_binary(path)
