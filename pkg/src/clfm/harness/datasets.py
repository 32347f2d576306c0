"""Plain-text dataset and sample dumps.

Files are CSV with a leading block of ``# key=value`` comment lines carrying
provenance (generator settings, seeds) and the coordinate layout, so a file
is interpretable without its generating config. Coordinate arrays are stored
as semicolon-separated rows of comma-separated components.
"""

from __future__ import annotations

import io

import numpy as np

__all__ = ["save_table", "load_table", "encode_coords", "decode_coords"]

_FLOAT_FMT = "%.17g"  # round-trips float64 exactly


def encode_coords(coords: np.ndarray) -> str:
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    return ";".join(",".join(_FLOAT_FMT % v for v in row) for row in coords)


def decode_coords(text: str) -> np.ndarray:
    rows = [r for r in text.split(";") if r]
    if not rows:
        return np.empty((0, 1))
    return np.array([[float(v) for v in r.split(",")] for r in rows])


def save_table(path, data: np.ndarray, meta: dict):
    """Write a 2-D array as CSV under a ``# key=value`` header block."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    with open(path, "w") as fh:
        for key, value in meta.items():
            if any(c in str(key) for c in "=\n"):
                raise ValueError(f"metadata key {key!r} may not contain '='")
            if "\n" in str(value):
                raise ValueError(f"metadata value for {key!r} spans lines")
            fh.write(f"# {key}={value}\n")
        for row in data:
            fh.write(",".join(_FLOAT_FMT % v for v in row) + "\n")


def load_table(path):
    """Read back a (data, meta) pair written by save_table."""
    meta = {}
    body = io.StringIO()
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                stripped = line[1:].strip()
                if "=" in stripped:
                    key, _, value = stripped.partition("=")
                    meta[key.strip()] = value
            else:
                body.write(line)
    body.seek(0)
    text = body.getvalue().strip()
    if not text:
        return np.empty((0, 0)), meta
    data = np.atleast_2d(np.loadtxt(io.StringIO(text), delimiter=",", ndmin=2))
    return data, meta
