"""SPDA1 binary dataset container with a JSON sidecar.

Layout (little-endian)::

    b"SPDA1"
    u32 version, u32 n_spectra, u32 n_bins, u32 n_classes, f64 e_min, f64 e_max
    f32[n_spectra * n_bins]     counts (row-major)
    f32[n_spectra * n_classes]  labels
    f32[n_spectra]              live times

The sidecar ``<file>.json`` holds class names, domain/split tags, master seed
and the scenario config hash.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from specdapt.errors import CorruptFileError
from specdapt.spectra.types import EnergyGrid, LabeledDataset

MAGIC = b"SPDA1"
VERSION = 1
_HEADER = struct.Struct("<IIIIdd")
# float32 storage cannot hold label rows to 1e-9
STORED_LABEL_TOL = 1e-6


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def dataset_bytes(ds: LabeledDataset) -> bytes:
    n, n_bins = ds.counts.shape
    parts = [
        MAGIC,
        _HEADER.pack(VERSION, n, n_bins, len(ds.classes), float(ds.grid.e_min), float(ds.grid.e_max)),
        ds.counts.astype("<f4").tobytes(),
        ds.labels.astype("<f4").tobytes(),
        ds.live_times.astype("<f4").tobytes(),
    ]
    return b"".join(parts)


def save_dataset(ds: LabeledDataset, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dataset_bytes(ds))
    meta = {
        "format": "SPDA1",
        "version": VERSION,
        "classes": list(ds.classes),
        "domain_tag": ds.domain_tag,
        "split_tag": ds.split_tag,
        "master_seed": ds.meta.get("master_seed"),
        "config_hash": ds.meta.get("config_hash"),
    }
    if extra:
        meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CorruptFileError(f"cannot read dataset {path}: {exc}") from exc
    if blob[: len(MAGIC)] != MAGIC:
        raise CorruptFileError(f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    off = len(MAGIC)
    if len(blob) < off + _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    version, n, n_bins, n_classes, e_min, e_max = _HEADER.unpack_from(blob, off)
    if version != VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}")
    off += _HEADER.size
    expected = off + 4 * (n * n_bins + n * n_classes + n)
    if len(blob) != expected:
        raise CorruptFileError(f"{path}: payload is {len(blob)} bytes, expected {expected}")

    def take(count):
        nonlocal off
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).astype(np.float64)
        off += 4 * count
        return arr

    counts = take(n * n_bins).reshape(n, n_bins)
    labels = take(n * n_classes).reshape(n, n_classes)
    live = take(n)

    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{side}: unreadable sidecar: {exc}") from exc
    if len(meta.get("classes", [])) != n_classes:
        raise CorruptFileError(f"{side}: class list does not match header ({n_classes} classes)")
    if n and np.max(np.abs(labels.sum(axis=1) - 1.0)) > STORED_LABEL_TOL:
        raise CorruptFileError(f"{path}: label rows are off the simplex")

    # LabeledDataset checks rows to 1e-9; validate against the float32 tolerance above instead
    ds = LabeledDataset.__new__(LabeledDataset)
    ds.counts, ds.labels, ds.live_times = counts, labels, live
    ds.classes = list(meta["classes"])
    ds.grid = EnergyGrid(n_bins, e_min, e_max)
    ds.domain_tag, ds.split_tag = meta["domain_tag"], meta["split_tag"]
    ds.meta = {k: meta.get(k) for k in ("master_seed", "config_hash")}
    return ds
