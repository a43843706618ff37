"""CSV and key=value text formats.

Numbers are written with 17 significant digits so every double round-trips.
Writers use ``\\n`` line endings and no locale, so the same data always gives
the same bytes.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

from .option import PriceSeries
from .simulate import QueueTrace


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    if isinstance(x, (list, tuple, np.ndarray)):
        return ",".join(fmt(v) for v in x)
    return str(x)


def write_table(path, header, columns) -> None:
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])


def read_table(path, required=None) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a comma-separated file with a header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if required is not None and header[: len(required)] != list(required):
        raise ValueError(f"{path}: header must start with {','.join(required)}, got {','.join(header)}")
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return header, data


def write_panel(path, values) -> None:
    v = np.atleast_2d(np.asarray(values, dtype=float).T).T
    write_table(path, [f"p{i + 1}" for i in range(v.shape[1])], v.T)


def read_panel(path) -> np.ndarray:
    header, data = read_table(path)
    expected = [f"p{i + 1}" for i in range(len(header))]
    if header != expected:
        raise ValueError(f"{path}: panel header must be {','.join(expected)}")
    return data


def write_queue(path, trace: QueueTrace) -> None:
    t = np.arange(len(trace.q))
    cols = [t, trace.q]
    header = ["t", "q"]
    if trace.covariates is not None:
        for i in range(trace.covariates.shape[1]):
            header.append(f"p{i + 2}")
            # covariate increments belong to steps 1..N; row 0 is blank-filled with 0
            cols.append(np.concatenate([[0.0], trace.covariates[:, i]]))
    write_table(path, header, cols)


def read_queue(path) -> QueueTrace:
    header, data = read_table(path, ["t", "q"])
    covs = data[1:, 2:] if data.shape[1] > 2 else None
    return QueueTrace(data[:, 1], covs)


def write_prices(path, series: PriceSeries) -> None:
    write_table(path, ["t", "price"], [np.arange(len(series.s)), series.s])


def read_prices(path) -> PriceSeries:
    _, data = read_table(path, ["t", "price"])
    return PriceSeries(data[:, 1])


def write_report(path, items: dict) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in items.items():
            fh.write(f"{k}={fmt(v)}\n")


def read_report(path) -> dict:
    """Flat ``key=value`` text; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
