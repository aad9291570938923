"""Serialization helpers: decimal-string floats, canonical JSON, raw f64 files.

Floats in manifests are stored as decimal strings (``repr`` round-trips
exactly in Python), so manifests are platform-stable and diffable.
Matrix files are raw little-endian float64, row-major.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IntegrityError


def fstr(x: float) -> str:
    """Decimal string for a float that parses back to the identical value."""
    return repr(float(x))


def fparse(s) -> float:
    return float(s)


def fstr_list(xs) -> list[str]:
    return [fstr(x) for x in xs]


def fparse_list(ss) -> list[float]:
    return [float(s) for s in ss]


def write_json(path: Path | str, obj) -> None:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    text = json.dumps(obj, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def read_json(path: Path | str):
    return json.loads(Path(path).read_text())


def write_f64(path: Path | str, *arrays: np.ndarray) -> None:
    """Concatenate arrays as little-endian float64, row-major."""
    with open(path, "wb") as fh:
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_f64(path: Path | str, *shapes: tuple[int, ...]) -> list[np.ndarray]:
    """Read back arrays written by write_f64; shapes must match exactly."""
    raw = Path(path).read_bytes()
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    if len(raw) != expected:
        raise IntegrityError(
            f"{path}: expected {expected} bytes for shapes {shapes}, found {len(raw)}"
        )
    out = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        out.append(flat.reshape(shape).astype(np.float64))
        offset += count * 8
    return out
