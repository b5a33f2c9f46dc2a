"""CSV input and output.

Numbers are written with ``repr`` (shortest string that round-trips to the
same double), so written files reproduce metrics exactly when read back.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ..errors import InputError

JITTER = 1e-6


def _num(text, line, col):
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na"):
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise InputError(f"line {line}: column '{col}' is not a number ({text!r})") from None


def read_columns(path, required=("t", "y")) -> dict:
    """Read a headed CSV into float arrays keyed by column name."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path} is empty")
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"{path}: header lacks column(s) {missing}")
        cols = {h: [] for h in header}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            for h, v in zip(header, row):
                cols[h].append(_num(v, line, h))
    out = {h: np.array(v, dtype=float) for h, v in cols.items()}
    if out[header[0]].size == 0:
        raise InputError(f"{path} has a header but no data rows")
    return out


def check_equidistant(t, rel: float = JITTER) -> float:
    """Return the step of ``t``; raise :class:`InputError` naming the first bad line otherwise."""
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)):
        bad = int(np.argmax(~np.isfinite(t)))
        raise InputError(f"line {bad + 2}: time value is not finite")
    if t.size < 2:
        raise InputError("need at least two time points to infer the step (or set 'dt' in the config)")
    dt = float((t[-1] - t[0]) / (t.size - 1))
    if not dt > 0:
        raise InputError("time column must be increasing")
    off = np.abs(np.diff(t) - dt) > rel * dt
    if np.any(off):
        bad = int(np.argmax(off)) + 1
        raise InputError(f"line {bad + 2}: time step {float(t[bad] - t[bad - 1])!r} deviates from {dt!r} "
                         f"beyond relative jitter {rel}")
    return float(dt)


def read_series(path, dt=None):
    """``(t, y, dt)`` from a ``t,y`` CSV; empty or NaN ``y`` marks a missing value."""
    cols = read_columns(path)
    t, y = cols["t"], cols["y"]
    if dt is None or t.size > 1:
        step = check_equidistant(t)
        if dt is not None and abs(step - dt) > JITTER * dt:
            raise InputError(f"configured dt={dt!r} disagrees with data step {step!r}")
        dt = step
    return t, y, float(dt)


def read_timestamps(path) -> np.ndarray:
    """Event times from a one-column CSV (a second label column is ignored; a header is optional)."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    out = []
    with fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            try:
                out.append(float(row[0]))
            except ValueError:
                if line == 1:
                    continue  # header
                raise InputError(f"line {line}: timestamp is not a number ({row[0]!r})") from None
    return np.array(out, dtype=float)


def fmt(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_csv(path, header, columns):
    columns = [np.asarray(c).ravel() for c in columns]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([fmt(v) for v in row])


class CsvStream:
    """Append rows one at a time and flush after each, for ``tail -f``-style consumers."""

    def __init__(self, path, header):
        self._fh = open(Path(path), "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(header)
        self._fh.flush()

    def write(self, row):
        self._w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
