"""Bit-exact binary embedding store.

Layout (all integers little-endian):

    bytes 0..8   magic ``OWEMBED\\0``
    bytes 8..12  version  (u32, currently 1)
    bytes 12..20 count    (u64)
    bytes 20..24 dim      (u32)
    bytes 24..28 dtype    (u32, 0 = f32)
    bytes 28..   payload, count * dim little-endian f32, row-major

A sidecar JSONL index at ``<path>.idx.jsonl`` maps each row to its
proposal id: one ``{"row": i, "proposal_id": ...}`` object per line.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"OWEMBED\x00"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<8sIQII")


def sidecar_path(path) -> Path:
    return Path(str(path) + ".idx.jsonl")


def write_embedding_store(path, ids: list, vectors: np.ndarray) -> None:
    """Write vectors (one row per id) plus the sidecar row index."""
    arr = np.ascontiguousarray(np.asarray(vectors, dtype=np.float32))
    if arr.ndim != 2:
        raise FormatError(f"expected a 2-d array of vectors, got shape {arr.shape}")
    count, dim = arr.shape
    if dim == 0:
        raise FormatError("dim must be positive")
    if len(ids) != count:
        raise FormatError(f"{len(ids)} ids for {count} vectors")
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, count, dim, DTYPE_F32)
    payload = arr.astype("<f4", copy=False).tobytes()
    path.write_bytes(header + payload)
    with open(sidecar_path(path), "w") as fh:
        for row, pid in enumerate(ids):
            fh.write(json.dumps({"row": row, "proposal_id": pid}) + "\n")


def read_embedding_store(path) -> tuple[list, np.ndarray]:
    """Read a store written by :func:`write_embedding_store`.

    Returns (ids, vectors) where vectors is float32 of shape (count, dim).
    Raises FormatError on bad magic, unsupported dtype, or truncated payload.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such store: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than header")
    magic, version, count, dim, dtype = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")
    if dim == 0:
        raise FormatError("dim must be positive")
    expected = _HEADER.size + count * dim * 4
    if len(raw) != expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, found {len(raw)}")
    vectors = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim)

    side = sidecar_path(path)
    ids: list = list(range(count))
    if side.exists():
        ids = [None] * count
        with open(side) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                row = rec["row"]
                if not (0 <= row < count):
                    raise FormatError(f"sidecar row {row} out of range")
                ids[row] = rec["proposal_id"]
        if any(pid is None for pid in ids):
            raise FormatError("sidecar index does not cover every row")
    return ids, vectors.copy()
