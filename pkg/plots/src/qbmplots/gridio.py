"""Readers for the simulator's documented output formats.

Implemented against the file schemas only (no in-process coupling to the
simulator):

  * time-series CSV: leading ``# key: <json>`` metadata lines, then a header
    row and float rows;
  * grid files: ``<base>.json`` header (dims, extents, hbar, dtype,
    row-major layout) next to ``<base>.bin`` raw little-endian float64,
    complex payloads stored as stacked real/imaginary planes.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = ["read_timeseries_csv", "read_grid", "SchemaError"]


class SchemaError(ValueError):
    pass


def read_timeseries_csv(path):
    metadata = {}
    with open(path) as fh:
        line = fh.readline()
        while line.startswith("#"):
            key, sep, raw = line[1:].partition(":")
            if not sep:
                raise SchemaError(f"{path}: malformed metadata line {line!r}")
            try:
                metadata[key.strip()] = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: bad metadata JSON for {key.strip()!r}") from exc
            line = fh.readline()
        names = [c.strip() for c in line.strip().split(",")]
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric CSV payload") from exc
    if data.shape[1] != len(names):
        raise SchemaError(f"{path}: {data.shape[1]} columns for {len(names)} names")
    return {k: data[:, i] for i, k in enumerate(names)}, metadata


def require_columns(columns: dict, needed, path="") -> None:
    missing = [c for c in needed if c not in columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")


def read_grid(base):
    base = str(base)
    if base.endswith(".json"):
        base = base[:-5]
    with open(base + ".json") as fh:
        meta = json.load(fh)
    for key in ("dims", "dtype", "layout"):
        if key not in meta:
            raise SchemaError(f"{base}.json: missing header field {key!r}")
    if meta["layout"] != "row-major":
        raise SchemaError(f"{base}.json: unsupported layout {meta['layout']!r}")
    payload = np.fromfile(base + ".bin", dtype="<f8")
    expected = int(np.prod(meta["dims"]))
    if payload.size != expected:
        raise SchemaError(f"{base}.bin: {payload.size} values, header says {expected}")
    payload = payload.reshape(meta["dims"])
    if str(meta["dtype"]).startswith("complex128"):
        payload = payload[0] + 1j * payload[1]
    return payload, meta


def grid_axes(meta):
    """Reconstruct the (q, p) axes of a Wigner grid from its header."""
    try:
        nq, np_ = meta["dims"]
        q0, q1 = meta["q_extent"]
        p0, p1 = meta["p_extent"]
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"grid header lacks axis extents: {exc}") from exc
    return np.linspace(q0, q1, nq), np.linspace(p0, p1, np_)
