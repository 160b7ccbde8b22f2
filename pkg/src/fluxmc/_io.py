"""Binary container shared by ``.ens`` ensemble files and binary matrices.

Layout::

    <MAGIC> <version>\\n
    <metadata as one-line JSON>\\n
    sha256:<hex digest of metadata line + payload>\\n
    <payload: little-endian float64, row-major, sections back to back>

Section shapes are recomputed from the metadata by the caller, so a payload
that is too short or too long is caught before the checksum is checked.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ChecksumError, MetadataError, TruncatedStoreError

LE_F64 = np.dtype("<f8")


def _digest(meta_line: bytes, payload: bytes) -> str:
    h = hashlib.sha256()
    h.update(meta_line)
    h.update(payload)
    return h.hexdigest()


def encode_container(magic: str, version: int, metadata: dict, sections: Sequence[np.ndarray]) -> bytes:
    meta_line = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(s, dtype=LE_F64).tobytes() for s in sections)
    head = f"{magic} {version}\n".encode("ascii")
    check = f"sha256:{_digest(meta_line, payload)}\n".encode("ascii")
    return head + meta_line + b"\n" + check + payload


def write_container(path, magic, version, metadata, sections) -> None:
    Path(path).write_bytes(encode_container(magic, version, metadata, sections))


def read_header(raw: bytes, magic: str, version: int):
    """Split ``raw`` into (metadata dict, metadata line, checksum, payload)."""
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise TruncatedStoreError("file ends inside the header")
    head, meta_line, check, payload = parts
    try:
        got_magic, got_version = head.decode("ascii").split(" ")
        got_version = int(got_version)
    except (UnicodeDecodeError, ValueError) as exc:
        raise MetadataError(f"unreadable header line {head[:40]!r}") from exc
    if got_magic != magic:
        raise MetadataError(f"expected {magic} file, found {got_magic}")
    if got_version != version:
        raise MetadataError(f"unsupported {magic} version {got_version}")
    try:
        metadata = json.loads(meta_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MetadataError("metadata line is not valid JSON") from exc
    if not isinstance(metadata, dict):
        raise MetadataError("metadata must be a JSON object")
    if not check.startswith(b"sha256:"):
        raise MetadataError("missing checksum line")
    return metadata, meta_line, check[len(b"sha256:"):].decode("ascii"), payload


def split_payload(meta_line, checksum, payload, shapes):
    """Verify size then checksum, and cut ``payload`` into arrays of ``shapes``."""
    sizes = [int(np.prod(s, dtype=np.int64)) for s in shapes]
    expected = sum(sizes) * LE_F64.itemsize
    if len(payload) != expected:
        raise TruncatedStoreError(
            f"payload has {len(payload)} bytes, header shapes {list(shapes)} need {expected}"
        )
    if _digest(meta_line, payload) != checksum:
        raise ChecksumError("checksum mismatch; file is corrupted")
    out, offset = [], 0
    for shape, size in zip(shapes, sizes):
        arr = np.frombuffer(payload, dtype=LE_F64, count=size, offset=offset)
        # copy: native byte order, owned and aligned memory
        out.append(arr.astype(np.float64, copy=True).reshape(shape))
        offset += size * LE_F64.itemsize
    return out
