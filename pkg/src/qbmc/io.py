"""Output file formats: provenance-stamped CSV and binary grids.

CSV files start with ``# key: <json>`` metadata lines (resolved config, code
version) followed by a regular header row; column names and order are a
public contract.  Grid files come in pairs: ``<base>.json`` holds dimensions,
axis extents, hbar, dtype, layout and provenance; ``<base>.bin`` is the raw
row-major little-endian float64 payload.  Complex matrices are stored as two
stacked float64 planes (real, imaginary).
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = [
    "TIMESERIES_COLUMNS",
    "write_timeseries_csv",
    "read_timeseries_csv",
    "write_grid",
    "read_grid",
    "staged_outputs",
]

TIMESERIES_COLUMNS = (
    "t",
    "mean_q",
    "se_mean_q",
    "mean_p",
    "se_mean_p",
    "m_dq",
    "se_m_dq",
    "m_dp",
    "se_m_dp",
    "m_uncert",
    "se_m_uncert",
    "n_traj",
)


def write_timeseries_csv(path, columns: dict, metadata: dict | None = None) -> None:
    names = list(columns)
    rows = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    with open(path, "w") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_timeseries_csv(path):
    metadata = {}
    with open(path) as fh:
        line = fh.readline()
        while line.startswith("#"):
            key, _, raw = line[1:].partition(":")
            metadata[key.strip()] = json.loads(raw)
            line = fh.readline()
        names = line.strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {k: data[:, i] for i, k in enumerate(names)}, metadata


def write_grid(base, values: np.ndarray, header: dict) -> None:
    """Write ``base``.json + ``base``.bin; complex input becomes re/im planes."""
    base = str(base)
    values = np.asarray(values)
    if np.iscomplexobj(values):
        payload = np.stack([values.real, values.imag]).astype("<f8")
        dtype = "complex128-as-float64-planes"
    else:
        payload = values.astype("<f8")
        dtype = "float64"
    meta = dict(header)
    meta.update({"dims": list(payload.shape), "dtype": dtype, "layout": "row-major"})
    with open(base + ".json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    payload.tofile(base + ".bin")


def read_grid(base):
    base = str(base)
    if base.endswith(".json"):
        base = base[:-5]
    with open(base + ".json") as fh:
        meta = json.load(fh)
    payload = np.fromfile(base + ".bin", dtype="<f8").reshape(meta["dims"])
    if meta["dtype"].startswith("complex128"):
        payload = payload[0] + 1j * payload[1]
    return payload, meta


class staged_outputs:
    """Context manager that removes every registered file on failure."""

    def __init__(self):
        self.paths: list[str] = []

    def register(self, *paths) -> None:
        self.paths.extend(str(p) for p in paths)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in self.paths:
                try:
                    os.unlink(p)
                except OSError:
                    pass
        return False
