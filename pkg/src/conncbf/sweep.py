"""Grid sweeps over swarm size, threshold and delay settings, aggregated per cell.

A sweep file is a run config plus a ``[sweep]`` section whose list-valued
keys span the grid::

    [sweep]
    n_robots = 5, 10
    epsilon = 0.1, 0.3
    delay_max = 0, 0.05, 0.1
    delay_variable = false, true
    heuristic = true
    trials = 20
    base_seed = 0
"""
from __future__ import annotations

import csv
import itertools
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from conncbf.config import (apply_overrides, build_config, fields_from_ini, parse_bool, read_ini,
                            serialize)
from conncbf.sim_engine import (SUMMARY_COLUMNS, ConfigError, SimConfig, aggregate,
                                atomic_write_csv, atomic_write_text, fmt, run_trial, summary_row)

TABLE_COLUMNS = ["N", "epsilon", "delay_max", "delay_variable", "heuristic", "mean", "std", "min"]
SWEEP_KEYS = ("n_robots", "epsilon", "delay_max", "delay_variable", "heuristic", "trials", "base_seed")


@dataclass(frozen=True)
class SweepSpec:
    base: SimConfig
    n_robots: tuple[int, ...] = (5, 10)
    epsilon: tuple[float, ...] = (0.1, 0.3)
    delay_max: tuple[float, ...] = (0.0, 0.05, 0.1)
    delay_variable: tuple[bool, ...] = (False, True)
    heuristic: tuple[bool, ...] = (True,)
    trials: int = 20
    base_seed: int = 0

    def __post_init__(self):
        for name in ("n_robots", "epsilon", "delay_max", "delay_variable", "heuristic"):
            if not getattr(self, name):
                raise ConfigError(f"sweep list {name!r} is empty")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1 (got {self.trials})")

    def cells(self) -> list[tuple]:
        return list(itertools.product(self.n_robots, self.epsilon, self.delay_max,
                                      self.delay_variable, self.heuristic))

    def cell_config(self, cell) -> SimConfig:
        n, eps, delay, variable, heur = cell
        return self.base.replace(n_robots=n, epsilon=eps, delay_max=delay,
                                 delay_variable=variable, heuristic=heur)


def cell_key(cell) -> str:
    n, eps, delay, variable, heur = cell
    return f"N{n}_eps{eps:g}_delay{delay:g}_var{int(variable)}_heur{int(heur)}"


def cell_seeds(cell, trials: int, base_seed: int) -> list[int]:
    """Per-trial seeds salted by the cell key, so cells never shift each other's seeds."""
    salt = zlib.crc32(cell_key(cell).encode())
    return [int(np.random.SeedSequence([base_seed, salt, t]).generate_state(1)[0])
            for t in range(trials)]


def parse_sweep(path, overrides=()) -> SweepSpec:
    cp, lines = read_ini(path)
    base = build_config(apply_overrides(fields_from_ini(cp, lines, path, ("sweep",)), overrides),
                        str(path))
    if not cp.has_section("sweep"):
        return SweepSpec(base)
    kwargs = {}
    for key, text in cp.items("sweep"):
        if key not in SWEEP_KEYS:
            raise ConfigError(f"{path}: unknown key {key!r} in [sweep]")
        try:
            items = [s.strip() for s in text.split(",") if s.strip()]
            if key in ("trials", "base_seed"):
                kwargs[key] = int(text)
            elif key == "n_robots":
                kwargs[key] = tuple(int(s) for s in items)
            elif key in ("delay_variable", "heuristic"):
                kwargs[key] = tuple(parse_bool(s) for s in items)
            else:
                kwargs[key] = tuple(float(s) for s in items)
        except ValueError as exc:
            raise ConfigError(f"{path}: [sweep] field {key!r}: {exc}") from exc
    try:
        return SweepSpec(base, **kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _guarded_summary(task):
    config, seed = task
    try:
        return summary_row(run_trial(config, seed)), None
    except Exception as exc:  # reported per cell by the caller
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class CellOutcome:
    cell: tuple
    seeds: list[int]
    rows: list[dict]
    errors: list[tuple[int, str]]  # (trial index, message)

    @property
    def failed(self) -> bool:
        return bool(self.errors)


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[CellOutcome]:
    """Run every cell; identical results for any ``jobs``."""
    cells = spec.cells()
    seeds = [cell_seeds(c, spec.trials, spec.base_seed) for c in cells]
    tasks = [(spec.cell_config(c), s) for c, ss in zip(cells, seeds) for s in ss]
    if jobs <= 1:
        results = [_guarded_summary(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_guarded_summary, tasks))
    out = []
    for ci, cell in enumerate(cells):
        chunk = results[ci * spec.trials:(ci + 1) * spec.trials]
        rows = [r for r, _ in chunk if r is not None]
        errors = [(t, e) for t, (_, e) in enumerate(chunk) if e is not None]
        out.append(CellOutcome(cell, seeds[ci], rows, errors))
    return out


def table_row(outcome: CellOutcome) -> list[str]:
    n, eps, delay, variable, heur = outcome.cell
    head = [str(n), fmt(eps), fmt(delay), str(int(variable)), str(int(heur))]
    if outcome.failed:
        return head + ["", "", ""]
    agg = aggregate([r["min_lambda2"] for r in outcome.rows], outcome.seeds)
    return head + [fmt(agg.mean), fmt(agg.std), fmt(agg.min)]


def write_sweep(spec: SweepSpec, outcomes: list[CellOutcome], out_dir) -> Path:
    """``table.csv`` plus ``cells/<key>/summary.csv`` and the resolved ``config.ini``."""
    out_dir = Path(out_dir)
    for o in outcomes:
        atomic_write_csv(out_dir / "cells" / cell_key(o.cell) / "summary.csv", SUMMARY_COLUMNS,
                         [[fmt(r[c]) for c in SUMMARY_COLUMNS] for r in o.rows])
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "config.ini", serialize(spec.base))
    return atomic_write_csv(out_dir / "table.csv", TABLE_COLUMNS, [table_row(o) for o in outcomes])


def aggregate_from_summary(path) -> tuple[float, float, float]:
    """Recompute a cell's (mean, std, min) from its summary file."""
    with open(path, newline="") as fh:
        vals = [float(r["min_lambda2"]) for r in csv.DictReader(fh)]
    if not vals:
        return math.nan, math.nan, math.nan
    agg = aggregate(vals)
    return agg.mean, agg.std, agg.min
