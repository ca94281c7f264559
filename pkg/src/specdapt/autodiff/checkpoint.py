"""SPDW1 parameter checkpoints.

Layout (little-endian)::

    b"SPDW1", u32 version, u32 n_params
    per parameter: u16 name_len, name (utf-8), u8 rank, u32[rank] dims, f64[prod(dims)] values
    u8[n_params] trainable flags (same order)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from specdapt.autodiff.params import ParamStore
from specdapt.errors import CorruptFileError

MAGIC = b"SPDW1"
VERSION = 1


def params_bytes(params: ParamStore) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    out.append(bytes(int(params.trainable(n)) for n in params))
    return b"".join(out)


def params_from_bytes(blob: bytes, source="<bytes>") -> ParamStore:
    if blob[: len(MAGIC)] != MAGIC:
        raise CorruptFileError(f"{source}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    try:
        off = len(MAGIC)
        version, n = struct.unpack_from("<II", blob, off)
        off += 8
        if version != VERSION:
            raise CorruptFileError(f"{source}: unsupported checkpoint version {version}")
        entries = []
        for _ in range(n):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if off + 8 * count > len(blob):
                raise CorruptFileError(f"{source}: truncated values for {name!r}")
            values = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(dims)
            off += 8 * count
            entries.append((name, values))
        flags = blob[off : off + n]
        if len(flags) != n or off + n != len(blob):
            raise CorruptFileError(f"{source}: trainable-flag block malformed")
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptFileError(f"{source}: malformed checkpoint: {exc}") from exc
    params = ParamStore()
    for (name, values), flag in zip(entries, flags):
        params.add(name, values, bool(flag))
    return params


def save_params(params: ParamStore, path) -> Path:
    path = Path(path)
    path.write_bytes(params_bytes(params))
    return path


def load_params(path) -> ParamStore:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CorruptFileError(f"cannot read checkpoint {path}: {exc}") from exc
    return params_from_bytes(blob, str(path))
