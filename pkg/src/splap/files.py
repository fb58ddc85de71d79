"""Readers and writers for the on-disk formats: field snapshots and controls."""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .control import Control, project_control
from .errors import ConfigError

_HEADER = struct.Struct("<II")


def write_fields(path, fields) -> None:
    """Flat binary: u32 n_interior, u32 count, then count*n_interior LE float64."""
    a = np.atleast_2d(np.asarray(fields, dtype="<f8"))
    count, n = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(n, count))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_fields(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    n, count = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size :]
    if len(body) != 8 * n * count:
        raise ValueError(f"{path}: expected {n * count} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(count, n).astype(float)


def control_to_csv(h: Control) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("k", "t_k", "value"))
    for k, (t, v) in enumerate(zip(h.times, h.values)):
        w.writerow((k, repr(float(t)), repr(float(v))))
    return buf.getvalue()


def read_control_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column fine table (t, value); a header row is optional."""
    t, v = [], []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                a, b = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise ConfigError(f"{path}: bad control row {i + 1}: {row}", key="control.path") from None
            t.append(a)
            v.append(b)
    return np.array(t), np.array(v)


def load_control(path, n_steps: int, horizon: float) -> Control:
    t, v = read_control_table(path)
    try:
        return project_control(t, v, n_steps, horizon)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}", key="control.path") from exc
