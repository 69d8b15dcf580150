"""Flat binary parameter checkpoints.

Layout (all integers little-endian)::

    magic b"NKCP" | u32 version | u32 parameter count
    per parameter: u32 name length | name (utf-8) | u32 ndim | u64 dims[ndim] | f64 payload
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"NKCP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a normkit checkpoint")
    pos = 4
    try:
        version, count = struct.unpack_from("<II", blob, pos)
        pos += 8
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(blob):
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last parameter")
    return out


def save_checkpoint(path, params: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())


def restore(model, state: dict) -> None:
    """Copy ``state`` into the live parameter arrays of ``model``."""
    live = model.params()
    missing = set(live) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks {sorted(missing)}")
    for name, arr in live.items():
        if arr.shape != state[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {state[name].shape} != {arr.shape}")
        arr[...] = state[name]
