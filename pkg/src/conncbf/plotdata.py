"""Downsampled, plot-ready series extracted from a trial trace."""
from __future__ import annotations

import math
from pathlib import Path

from conncbf.sim_engine import atomic_write_csv, fmt, read_trace

PLOT_COLUMNS = ["kind", "t", "lambda2", "covered_area"]


class TraceError(ValueError):
    pass


def load_trace(path) -> dict[str, list]:
    try:
        cols = read_trace(path)
    except OSError as exc:
        raise TraceError(f"{path}: cannot read trace: {exc.strerror or exc}") from exc
    except (ValueError, StopIteration) as exc:
        raise TraceError(f"{path}: malformed trace: {exc or 'empty file'}") from exc
    for name in ("t", "lambda2_gt", "covered_area"):
        if name not in cols:
            raise TraceError(f"{path}: malformed trace: missing column {name!r}")
    if any(v is None for v in cols["t"]) or any(v is None for v in cols["lambda2_gt"]):
        raise TraceError(f"{path}: malformed trace: blank time or lambda2 entry")
    t = cols["t"]
    if any(b <= a for a, b in zip(t, t[1:])):
        raise TraceError(f"{path}: malformed trace: time column is not increasing")
    return cols


def plot_rows(cols, epsilon: float, every: int = 10, max_area: float | None = None) -> list[list[str]]:
    """Every ``every``-th sample (``ceil(K / every)`` rows), then reference records.

    Series rows have kind ``series``; ``epsilon`` and, for coverage traces,
    ``max_area`` rows carry the horizontal reference lines.
    """
    if every < 1:
        raise ValueError(f"downsample factor must be at least 1, got {every}")
    t, lam, area = cols["t"], cols["lambda2_gt"], cols["covered_area"]
    rows = [["series", fmt(t[k]), fmt(lam[k]), fmt(area[k])] for k in range(0, len(t), every)]
    rows.append(["epsilon", "", fmt(epsilon), ""])
    coverage = any(a is not None for a in area)
    if coverage and max_area is not None:
        rows.append(["max_area", "", "", fmt(max_area)])
    return rows


def write_plotdata(trace_path, out_path, epsilon: float, every: int = 10,
                   max_area: float | None = None) -> Path:
    cols = load_trace(trace_path)
    return atomic_write_csv(out_path, PLOT_COLUMNS, plot_rows(cols, epsilon, every, max_area))


def expected_rows(n_samples: int, every: int) -> int:
    return math.ceil(n_samples / every)
