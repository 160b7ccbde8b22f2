"""
Monte Carlo ensemble of MAP estimators.

Member ``k`` draws a perturbed prior mean ``c_k ~ N(1, b2 I)`` and a
perturbed observation ``y_k = A mu + eps_k`` with ``eps_k ~ N(0, R)``, then
solves for its MAP estimate, either in closed form (explicit matrix) or with
the variational solver. The covariance of the MAP estimates equals the
posterior covariance, so the stored ensemble supports post-hoc variance
estimates for any linear functional.

Draws for member ``k`` come from a counter-based stream keyed by
``(master_seed, k)``; members are processed in fixed-size chunks whose
boundaries depend only on the problem size, so the stored ensemble is
byte-identical for any worker count.
"""

from __future__ import annotations

import datetime as _dt
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _io
from .errors import (DimensionError, EnsembleFailureError, InsufficientSampleError,
                     MetadataError, UnsupportedPathError)
from .forward import ForwardOperator, NoiseSpec, PriorSpec
from .hadamard import as_vector
from .posterior import DENSE_CAP, map_estimators_batch, posterior_covariance
from .rng import PURPOSE_MEMBERS, stream_normals
from .solver import SolverConfig, SolverReport, VariationalProblem, minimize

log = logging.getLogger(__name__)

ENS_MAGIC = "FLUXMC-ENS"
ENS_VERSION = 1
SOLVERS = ("analytic", "variational")


@dataclass
class EnsembleConfig:
    M: int
    master_seed: int
    operator: ForwardOperator
    prior: PriorSpec
    noise: NoiseSpec
    mu: np.ndarray
    solver: str = "analytic"
    workers: int = 1
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    max_failure_fraction: float = 0.0
    exclude_failed: bool = False
    dense_cap: int = DENSE_CAP

    def __post_init__(self):
        if int(self.M) < 2:
            raise InsufficientSampleError("an ensemble needs M >= 2 members")
        self.M = int(self.M)
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        op = self.operator
        self.mu = as_vector(self.mu, "mu", op.m)
        if self.prior.m != op.m or self.noise.n != op.n:
            raise DimensionError("prior/noise dimensions do not match the operator")
        if self.solver == "analytic" and not op.is_explicit:
            raise UnsupportedPathError("analytic solver needs an explicit matrix")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")

    @property
    def m(self) -> int:
        return self.operator.m

    @property
    def n(self) -> int:
        return self.operator.n

    def chunk_rows(self) -> int:
        return max(1, min(4096, (1 << 21) // (self.m + self.n)))


@dataclass
class EnsembleMember:
    index: int
    c_k: np.ndarray
    y_k: np.ndarray
    c_map: np.ndarray
    solver_report: SolverReport | None = None


@dataclass
class EnsembleStore:
    """Persisted ensemble: ``members`` is ``(M, m)``, one MAP estimate per row."""

    metadata: dict
    members: np.ndarray
    control: np.ndarray
    reports: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.float64)
        self.control = as_vector(self.control, "control")
        if self.members.ndim != 2 or self.members.shape[1] != len(self.control):
            raise DimensionError("members must be (M, m) with m == len(control)")
        if self.metadata.get("M") != self.members.shape[0] or self.metadata.get("m") != self.members.shape[1]:
            raise MetadataError("metadata M/m disagree with the member array")

    @property
    def M(self) -> int:
        return self.members.shape[0]

    @property
    def m(self) -> int:
        return self.members.shape[1]


def _observation_mean(cfg: EnsembleConfig) -> np.ndarray:
    return cfg.operator.apply(cfg.mu)


def _draw_inputs(cfg: EnsembleConfig, indices, a_mu):
    z = stream_normals(cfg.master_seed, PURPOSE_MEMBERS, indices, cfg.m + cfg.n)
    c = 1.0 + np.sqrt(cfg.prior.variance) * z[:, :cfg.m]
    y = a_mu + np.sqrt(cfg.noise.variances) * z[:, cfg.m:]
    return c, y


def sample_member_inputs(k: int, cfg: EnsembleConfig, a_mu=None):
    """Prior mean ``c_k`` and observation ``y_k`` for member ``k``."""
    if not 0 <= k < cfg.M:
        raise IndexError(f"member index {k} outside [0, {cfg.M})")
    if a_mu is None:
        a_mu = _observation_mean(cfg)
    c, y = _draw_inputs(cfg, [k], a_mu)
    return c[0], y[0]


def _created_stamp(created):
    if created is not None:
        return str(created)
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc))
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def run_ensemble(cfg: EnsembleConfig, created: str | None = None) -> EnsembleStore:
    """Generate all members and their MAP estimates.

    ``created`` is written to the metadata; when omitted it comes from
    ``SOURCE_DATE_EPOCH`` if set, else the current UTC time.

    Raises
    ------
    EnsembleFailureError
        More than ``max_failure_fraction * M`` variational members failed to
        converge.
    """
    a_mu = _observation_mean(cfg)
    M, m = cfg.M, cfg.m
    members = np.empty((M, m))
    reports: list = [None] * M
    rows = cfg.chunk_rows()
    chunks = [(s, min(s + rows, M)) for s in range(0, M, rows)]

    if cfg.solver == "analytic":
        sigma = posterior_covariance(cfg.operator, cfg.noise, cfg.prior, cfg.mu, cfg.dense_cap)

        def work(bounds):
            lo, hi = bounds
            c, y = _draw_inputs(cfg, np.arange(lo, hi), a_mu)
            members[lo:hi] = map_estimators_batch(cfg.operator, cfg.noise, c, y,
                                                  cfg.prior, cfg.mu, sigma)
    else:
        def work(bounds):
            lo, hi = bounds
            c, y = _draw_inputs(cfg, np.arange(lo, hi), a_mu)
            for j in range(hi - lo):
                problem = VariationalProblem(cfg.operator, cfg.noise, cfg.prior, cfg.mu, c[j], y[j])
                rep = minimize(c[j], problem, cfg.solver_config)
                members[lo + j] = rep.solution
                reports[lo + j] = rep

    if cfg.workers == 1:
        for b in chunks:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(work, chunks))

    failed = [k for k, r in enumerate(reports) if r is not None and not r.converged]
    if failed:
        frac = len(failed) / M
        if frac > cfg.max_failure_fraction:
            raise EnsembleFailureError(
                f"{len(failed)} of {M} members did not converge "
                f"(allowed fraction {cfg.max_failure_fraction})", failed)
        log.warning("%d of %d members did not converge", len(failed), M)

    meta = {
        "M": M, "m": m, "n": cfg.n, "b2": cfg.prior.variance,
        "master_seed": int(cfg.master_seed), "solver": cfg.solver,
        "operator_fingerprint": cfg.operator.fingerprint(),
        "created": _created_stamp(created),
    }
    if failed:
        meta["failed_members"] = failed
    if cfg.solver == "variational":
        meta["max_iterations"] = max(r.iterations for r in reports)
    if failed and cfg.exclude_failed:
        keep = np.setdiff1d(np.arange(M), failed)
        members = members[keep]
        reports = [reports[k] for k in keep]
        meta["excluded_members"] = failed
        meta["M"] = len(keep)
    store = EnsembleStore(meta, members, cfg.mu.copy(),
                          reports if cfg.solver == "variational" else None)
    return store


def member(cfg: EnsembleConfig, store: EnsembleStore, k: int) -> EnsembleMember:
    """Reassemble member ``k`` (inputs are regenerated from the stream)."""
    c, y = sample_member_inputs(k, cfg)
    rep = store.reports[k] if store.reports else None
    return EnsembleMember(k, c, y, store.members[k].copy(), rep)


def empirical_covariance(store: EnsembleStore, dense_cap: int = DENSE_CAP) -> np.ndarray:
    """Unbiased sample covariance of the members, mean removed first."""
    if store.m > dense_cap:
        raise UnsupportedPathError(f"m={store.m} exceeds dense cap; use functionals")
    if store.M < 2:
        raise InsufficientSampleError("need at least two members")
    dev = store.members - store.members.mean(axis=0)
    cov = dev.T @ dev / (store.M - 1)
    return 0.5 * (cov + cov.T)


def flux_members(store: EnsembleStore) -> np.ndarray:
    """Members mapped to flux space, ``c_map * mu`` row by row."""
    return store.members * store.control[np.newaxis, :]


# ------------------------------------------------------------- persistence

def encode_store(store: EnsembleStore) -> bytes:
    return _io.encode_container(ENS_MAGIC, ENS_VERSION, store.metadata,
                                [store.members, store.control])


def save_store(store: EnsembleStore, path) -> None:
    """Write ``store`` to ``path`` (conventionally ``*.ens``)."""
    Path(path).write_bytes(encode_store(store))


def read_store_header(path) -> dict:
    raw = Path(path).read_bytes()
    meta, _, check, payload = _io.read_header(raw, ENS_MAGIC, ENS_VERSION)
    return {"format": f"{ENS_MAGIC} {ENS_VERSION}", "checksum": f"sha256:{check}",
            "payload_bytes": len(payload), **meta}


def load_store(path) -> EnsembleStore:
    """Load and verify an ensemble file.

    Raises
    ------
    TruncatedStoreError
        Payload size inconsistent with the shape in the header.
    ChecksumError
        Payload or metadata altered.
    MetadataError
        Unreadable header or inconsistent metadata.
    """
    raw = Path(path).read_bytes()
    meta, line, check, payload = _io.read_header(raw, ENS_MAGIC, ENS_VERSION)
    try:
        M, m = int(meta["M"]), int(meta["m"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MetadataError("ensemble header needs integer M and m") from exc
    if M < 1 or m < 1:
        raise MetadataError(f"invalid ensemble shape M={M}, m={m}")
    members, control = _io.split_payload(line, check, payload, [(M, m), (m,)])
    return EnsembleStore(meta, members, control)
