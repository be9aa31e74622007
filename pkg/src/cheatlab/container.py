"""Binary tensor container used by checkpoints, datasets, and pair files.

Layout, all integers little-endian:

    magic   4 bytes  b"LCLB"
    version u32      currently 1
    count   u32      number of tensor records
    records          per record: name_len u32, name utf-8, rank u32,
                     dims rank * u32, payload float64 little-endian
    meta_len u64     length of the JSON metadata trailer
    meta             canonical JSON (sorted keys, compact separators)
    checksum 32 bytes sha256 over every preceding byte

Structural violations (bad magic, unknown version, truncation, trailing
garbage) raise FormatError; checksum or digest disagreements raise
IntegrityError. Writing is deterministic: identical content yields
identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import FormatError, IntegrityError
from .autodiff import ParamSet

MAGIC = b"LCLB"
VERSION = 1
_MAX_RANK = 8
_MAX_NAME = 4096


def params_digest(params: ParamSet) -> str:
    """SHA-256 hex digest of a ParamSet's canonical serialization.

    The byte stream is, per tensor in insertion order: name length (u32),
    utf-8 name, rank (u32), dims (u32 each), then the float64 payload in
    row-major little-endian order. Trainable flags do not participate.
    """
    h = hashlib.sha256()
    for name, t in params.items():
        h.update(_record_bytes(name, t.data))
    return h.hexdigest()


def _record_bytes(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    buf = [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
    for d in arr.shape:
        buf.append(struct.pack("<I", d))
    buf.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(buf)


def _canonical_json(meta: Mapping) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()


def write_container(
    path, records: Mapping[str, np.ndarray], metadata: Mapping
) -> None:
    """Write named float64 arrays plus a JSON trailer; see module layout."""
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<I", VERSION))
    body.write(struct.pack("<I", len(records)))
    for name, arr in records.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim > _MAX_RANK:
            raise FormatError(f"record {name!r} rank {arr.ndim} > {_MAX_RANK}")
        body.write(_record_bytes(name, arr))
    meta = _canonical_json(metadata)
    body.write(struct.pack("<Q", len(meta)))
    body.write(meta)
    payload = body.getvalue()
    checksum = hashlib.sha256(payload).digest()
    with open(path, "wb") as f:
        f.write(payload)
        f.write(checksum)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.blob):
            raise FormatError(
                f"file ended unexpectedly at byte {self.at} "
                f"(wanted {n} more of {len(self.blob)})"
            )
        out = self.blob[self.at : self.at + n]
        self.at += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container; returns (records, metadata) after verification."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 32:
        raise FormatError(f"file too short ({len(blob)} bytes)")
    payload, stored = blob[:-32], blob[-32:]
    r = _Reader(payload)
    if r.take(4) != MAGIC:
        raise FormatError(f"bad magic; expected {MAGIC!r}")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")
    count = r.u32()
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u32()
        if name_len > _MAX_NAME:
            raise FormatError(f"record name length {name_len} out of bounds")
        name = r.take(name_len).decode("utf-8")
        rank = r.u32()
        if rank > _MAX_RANK:
            raise FormatError(f"record {name!r} rank {rank} out of bounds")
        dims = tuple(r.u32() for _ in range(rank))
        n = 1
        for d in dims:
            n *= d
        data = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims)
        if name in records:
            raise FormatError(f"duplicate record name {name!r}")
        records[name] = data.astype(np.float64)
    meta_len = r.u64()
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    if r.at != len(payload):
        raise FormatError(f"{len(payload) - r.at} trailing bytes after trailer")
    if hashlib.sha256(payload).digest() != stored:
        raise IntegrityError("checksum mismatch; file content was altered")
    return records, meta


# ---------------------------------------------------------------------------
# checkpoints: a ParamSet plus metadata in one container


@dataclass
class Checkpoint:
    stage: str
    params: ParamSet
    metadata: dict


def save_checkpoint(path, stage: str, params: ParamSet, metadata: Mapping) -> str:
    """Persist a ParamSet; returns the embedded parameter digest."""
    digest = params_digest(params)
    meta = dict(metadata)
    meta["stage"] = stage
    meta["params_digest"] = digest
    meta["trainable"] = {name: t.trainable for name, t in params.items()}
    records = {name: t.data for name, t in params.items()}
    write_container(path, records, meta)
    return digest


def load_checkpoint(path) -> Checkpoint:
    """Load and re-verify a checkpoint written by save_checkpoint."""
    records, meta = read_container(path)
    for key in ("stage", "params_digest", "trainable"):
        if key not in meta:
            raise FormatError(f"checkpoint metadata missing {key!r}")
    params = ParamSet()
    flags = meta["trainable"]
    for name, arr in records.items():
        params.add(name, arr, trainable=bool(flags.get(name, True)))
    digest = params_digest(params)
    if digest != meta["params_digest"]:
        raise IntegrityError(
            "parameter digest mismatch: metadata says "
            f"{meta['params_digest'][:12]}.., payload hashes to {digest[:12]}.."
        )
    return Checkpoint(stage=meta["stage"], params=params, metadata=meta)


def file_digest(path) -> str:
    """SHA-256 hex digest of a file on disk, for stage summary chaining."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
