"""
Counter-based Gaussian streams for ensemble sampling.

Every draw is a pure function of ``(seed, purpose, member, block)`` through
the Philox4x32-10 block cipher, so member ``k`` gets the same numbers no
matter how members are scheduled or batched. Uniforms are built from 53
random bits and mapped to normals by inverse CDF, which keeps the number of
draws per member fixed.
"""

from __future__ import annotations

import numpy as np

from .special import normal_quantile

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

PURPOSE_MEMBERS = 0
PURPOSE_OBSERVATIONS = 1
PURPOSE_REPLICATES = 2


def philox4x32(counter, key, rounds: int = 10) -> np.ndarray:
    """Philox4x32 block function.

    Parameters
    ----------
    counter : (..., 4) array of uint32-valued integers
    key : pair of uint32-valued integers

    Returns
    -------
    (..., 4) uint64 array holding 32-bit outputs.
    """
    ctr = np.asarray(counter, dtype=np.uint64) & _MASK
    c0, c1, c2, c3 = (ctr[..., i].copy() for i in range(4))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def _seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0 or seed >= 1 << 64:
        raise ValueError("seed must fit in 64 unsigned bits")
    return seed & 0xFFFFFFFF, seed >> 32


def stream_uniforms(seed: int, purpose: int, indices, count: int) -> np.ndarray:
    """Open-interval uniforms, ``(len(indices), count)``, one row per stream index."""
    idx = np.asarray(indices, dtype=np.uint64).ravel()
    nblocks = (count + 1) // 2
    ctr = np.empty((idx.size, nblocks, 4), dtype=np.uint64)
    ctr[..., 0] = np.arange(nblocks, dtype=np.uint64)[np.newaxis, :]
    ctr[..., 1] = (idx & _MASK)[:, np.newaxis]
    ctr[..., 2] = (idx >> _SHIFT)[:, np.newaxis]
    ctr[..., 3] = np.uint64(purpose)
    words = philox4x32(ctr, _seed_key(seed))
    # two 32-bit words -> 53 bits -> (0, 1)
    hi = words[..., 0::2] >> np.uint64(5)
    lo = words[..., 1::2] >> np.uint64(6)
    bits = (hi << np.uint64(26)) | lo
    u = (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    return u.reshape(idx.size, 2 * nblocks)[:, :count]


def stream_normals(seed: int, purpose: int, indices, count: int) -> np.ndarray:
    """Standard normals, ``(len(indices), count)``, one row per stream index."""
    return normal_quantile(stream_uniforms(seed, purpose, indices, count))
