"""Synchronous closed-loop simulation of the delayed decentralised controller.

Every tick each robot reads the swarm snapshot its own delay allows, builds
its (optionally inflated) view of the communication graph, computes its
desired velocity and filters it through its CBF program.  All commands are
then applied at once and ground-truth metrics are recorded.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from conncbf.behaviors import (Arena, CoverageParams, coverage_velocity, covered_area,
                               disconnecting_velocity, voronoi_partition)
from conncbf.delay_model import (HeuristicParams, StateHistory, assign_delays, delay_steps,
                                 delayed_state)
from conncbf.safety_filter import CbfParams, QpStatus, filter_command
from conncbf.spectral_graph import (SwarmState, build_graph, default_sigma, eigenvalue_gradient,
                                    fiedler, pairwise_distances)
from conncbf.vehicle_dynamics import (DynamicsMode, UnicyclePose, apply_damping, feedback_linearize,
                                      step_single_integrator, step_unicycle)

BEHAVIORS = ("disconnecting", "coverage")
INIT_MAX_ATTEMPTS = 10_000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_robots: int = 10
    dim: int = 2
    duration: float = 50.0
    dt: float = 0.1
    behavior: str = "disconnecting"
    dynamics: str = "single_integrator"
    comm_radius: float = 1.0
    sigma: float | None = None  # None: R^4 / ln 2
    epsilon: float = 0.3
    d_min: float = 0.25
    u_max: float = 0.2
    alpha_connectivity: float = 1.0
    alpha_collision: float = 1.0
    decentral_split: str = "per_capita"
    delay_max: float = 0.0
    delay_variable: bool = False
    heuristic: bool = False
    heuristic_tau: float | None = None  # None: each robot uses its own delay
    kappa: float = 0.04
    v_max: float | None = None  # None: u_max
    k_disconnect: float | None = None  # None: u_max
    k_cov: float = 1.0
    r_sensing: float = 0.75
    max_area: float = 3.68
    offset: float = 0.1
    wheel_limit: float = 0.2
    axle_length: float = 0.105
    damping_gain: float = 0.0
    mode_band: float = 0.05  # eigenvalues within this of lambda2 get their own rows
    arena: tuple[float, float, float, float] | None = None  # None: per-behavior default
    initial_positions: tuple[tuple[float, ...], ...] | None = None
    init_spacing_margin: float = 0.05
    init_region: float | None = None  # side of the centred spawn square; None: whole arena
    rng_seed: int = 0

    def __post_init__(self):
        problems = []
        positive = ["duration", "dt", "comm_radius", "epsilon", "d_min", "u_max",
                    "alpha_connectivity", "alpha_collision", "k_cov", "r_sensing", "max_area",
                    "offset", "wheel_limit", "axle_length"]
        for name in positive:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                if not (name == "duration" and v == 0):
                    problems.append(f"{name} must be positive (got {v!r})")
        for name in ("sigma", "v_max", "k_disconnect", "heuristic_tau", "init_region"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and (v > 0 or (name == "heuristic_tau" and v == 0))):
                problems.append(f"{name} must be positive (got {v!r})")
        for name in ("delay_max", "kappa", "init_spacing_margin", "mode_band"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                problems.append(f"{name} must be non-negative (got {v!r})")
        if self.n_robots < 2:
            problems.append(f"n_robots must be at least 2 (got {self.n_robots})")
        if self.dim not in (2, 3):
            problems.append(f"dim must be 2 or 3 (got {self.dim})")
        if self.behavior not in BEHAVIORS:
            problems.append(f"behavior must be one of {BEHAVIORS} (got {self.behavior!r})")
        if self.dynamics not in [m.value for m in DynamicsMode]:
            problems.append(f"dynamics must be single_integrator or unicycle (got {self.dynamics!r})")
        if self.decentral_split not in ("per_capita", "literal"):
            problems.append(f"decentral_split must be per_capita or literal (got {self.decentral_split!r})")
        if not 0.0 <= self.damping_gain < 1.0:
            problems.append(f"damping_gain must lie in [0, 1) (got {self.damping_gain!r})")
        if self.dim == 3 and (self.behavior == "coverage" or self.dynamics == "unicycle"):
            problems.append("dim = 3 only supports the disconnecting behavior with single_integrator")
        if self.arena is not None:
            x_lo, x_hi, y_lo, y_hi = self.arena
            if not (x_hi > x_lo and y_hi > y_lo):
                problems.append(f"arena must have positive area (got {self.arena})")
        if self.initial_positions is not None:
            if len(self.initial_positions) != self.n_robots:
                problems.append(f"initial_positions lists {len(self.initial_positions)} robots, "
                                f"n_robots is {self.n_robots}")
            elif any(len(p) != self.dim for p in self.initial_positions):
                problems.append(f"every initial position needs {self.dim} coordinates")
        if problems:
            raise ConfigError("; ".join(problems))

    def replace(self, **changes) -> SimConfig:
        return dataclasses.replace(self, **changes)

    @property
    def sigma_value(self) -> float:
        return default_sigma(self.comm_radius) if self.sigma is None else self.sigma

    @property
    def v_max_value(self) -> float:
        return self.u_max if self.v_max is None else self.v_max

    @property
    def k_disconnect_value(self) -> float:
        return self.u_max if self.k_disconnect is None else self.k_disconnect

    @property
    def arena_value(self) -> Arena:
        if self.arena is not None:
            return Arena(*self.arena)
        return Arena.square(2.3 if self.behavior == "coverage" else 2.0)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def cbf_params(self) -> CbfParams:
        return CbfParams(self.epsilon, self.d_min, self.alpha_connectivity, self.alpha_collision,
                         self.decentral_split)

    def heuristic_for(self, tau_i: float) -> HeuristicParams:
        tau = tau_i if self.heuristic_tau is None else self.heuristic_tau
        return HeuristicParams(self.v_max_value, tau, self.kappa, self.heuristic)


@dataclass
class TrialResult:
    seed: int
    delays: tuple[float, ...]
    t: np.ndarray
    lambda2_gt: np.ndarray
    lambda2_perceived: np.ndarray  # (K, N)
    positions: np.ndarray  # (K, N, dim)
    commands: np.ndarray  # (K, N, dim)
    qp_status: np.ndarray  # (K, N) of QpStatus values
    h_safety_min: np.ndarray
    min_pair_dist_series: np.ndarray
    covered_area: np.ndarray | None = None
    max_area: float = 3.68
    area_settle_fraction: float = 0.5
    extra: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.t)

    @property
    def min_lambda2(self) -> float:
        return float(self.lambda2_gt.min()) if self.n_steps else math.nan

    @property
    def min_pair_dist(self) -> float:
        return float(self.min_pair_dist_series.min()) if self.n_steps else math.nan

    @property
    def qp_infeasible_ticks(self) -> int:
        return int(np.any(self.qp_status == QpStatus.CLIPPED_INFEASIBLE.value, axis=1).sum())

    @property
    def mean_area_deviation_pct(self) -> float:
        """Mean shortfall from the reference area over the settled second half, in percent."""
        if self.covered_area is None or not self.n_steps:
            return math.nan
        start = int(self.n_steps * self.area_settle_fraction)
        area = self.covered_area[start:]
        return float(np.mean((self.max_area - area) / self.max_area) * 100.0)


def _rng_streams(seed: int):
    ss = np.random.SeedSequence(seed)
    pos_ss, delay_ss, head_ss = ss.spawn(3)
    return np.random.default_rng(pos_ss), delay_ss, np.random.default_rng(head_ss)


def _spawn_bounds(config: SimConfig):
    arena = config.arena_value
    lo = np.array([arena.x_lo, arena.y_lo])
    hi = np.array([arena.x_hi, arena.y_hi])
    if config.init_region is not None:
        c = arena.center
        half = 0.5 * np.minimum(config.init_region, hi - lo)
        lo, hi = c - half, c + half
    if config.dim == 3:
        lo, hi = np.append(lo, lo[0]), np.append(hi, hi[0])
    return lo, hi


def initial_positions(config: SimConfig, rng, min_inflation: float = 0.0) -> np.ndarray:
    """Random start with spacing ``d_min + margin``, redrawn until connected.

    Robots are placed one at a time, uniformly in the spawn square, each
    redrawn until it clears the spacing to those already placed.  Whole
    configurations are rejected until lambda2 exceeds epsilon on distances
    inflated by ``min_inflation``, so every robot starts inside its own
    perceived safe set.
    """
    if config.initial_positions is not None:
        return np.array(config.initial_positions, dtype=np.float64)
    lo, hi = _spawn_bounds(config)
    spacing = config.d_min + config.init_spacing_margin
    N = config.n_robots
    for _ in range(INIT_MAX_ATTEMPTS):
        pos = np.empty((N, config.dim))
        for i in range(N):
            for _ in range(1000):
                p = lo + rng.random(config.dim) * (hi - lo)
                if i == 0 or np.min(np.linalg.norm(pos[:i] - p, axis=1)) >= spacing:
                    break
            else:
                break
            pos[i] = p
        else:
            g = build_graph(SwarmState(pos), config.comm_radius, config.sigma_value, min_inflation)
            if fiedler(g).lambda2 > config.epsilon:
                return pos
    raise ConfigError(f"no connected initial configuration found in {INIT_MAX_ATTEMPTS} attempts")


def _clamp_norm(u, limit):
    n = float(np.linalg.norm(u))
    return u if n <= limit else u * (limit / n)


def run_trial(config: SimConfig, seed: int | None = None) -> TrialResult:
    seed = config.rng_seed if seed is None else int(seed)
    pos_rng, delay_ss, head_rng = _rng_streams(seed)
    N, dim, dt = config.n_robots, config.dim, config.dt
    delays = assign_delays(N, config.delay_max, config.delay_variable, delay_ss).per_robot_delay
    heur = [config.heuristic_for(tau) for tau in delays]
    lags = [delay_steps(tau, dt) for tau in delays]
    cbf = config.cbf_params()
    R, sigma = config.comm_radius, config.sigma_value
    arena = config.arena_value
    cov = CoverageParams(config.r_sensing, config.k_cov, config.max_area)
    unicycle = config.dynamics == DynamicsMode.UNICYCLE.value

    x = initial_positions(config, pos_rng, max(h.inflation for h in heur))
    poses = None
    if unicycle:
        headings = head_rng.uniform(-math.pi, math.pi, size=N)
        # the given points are the controlled offset points
        poses = [UnicyclePose(x[i] - config.offset * np.array([math.cos(h), math.sin(h)]), h)
                 for i, h in enumerate(headings)]

    history = StateHistory(dt, config.delay_max)
    K = config.n_steps
    t_series = np.arange(K) * dt
    lam_gt = np.empty(K)
    lam_p = np.empty((K, N))
    pos_series = np.empty((K, N, dim))
    cmd_series = np.empty((K, N, dim))
    status = np.empty((K, N), dtype=object)
    h_min = np.empty(K)
    dmin_series = np.empty(K)
    area = np.empty(K) if config.behavior == "coverage" else None
    u_prev = np.zeros((N, dim))

    for k in range(K):
        now = SwarmState(x, k * dt)
        history.append(now)
        views = {}

        def view(lag, inflation):
            key = (lag, inflation)
            if key not in views:
                snap = history.lag(lag)
                g = build_graph(snap, R, sigma, inflation)
                f = fiedler(g)
                views[key] = (snap, g, f, f.near_modes(config.mode_band), {})
            return views[key]

        u = np.empty((N, dim))
        for i in range(N):
            snap, g, f, modes, cells_cache = view(lags[i], heur[i].inflation)
            if config.behavior == "disconnecting":
                u_des = disconnecting_velocity(i + 1, N, config.k_disconnect_value)
                if dim == 3:
                    u_des = np.append(u_des, 0.0)
            else:
                if "cells" not in cells_cache:
                    cells_cache["cells"] = voronoi_partition(snap.positions, arena)
                u_des = coverage_velocity(i, snap.positions, arena, cov, cells_cache["cells"])
                u_des = _clamp_norm(u_des, config.u_max)
            grad_i = eigenvalue_gradient(snap, g, f.v2, i)
            cmd = filter_command(i, u_des, f, grad_i, snap, cbf, config.u_max,
                                 [(lam, eigenvalue_gradient(snap, g, vec, i)) for lam, vec in modes])
            u[i] = apply_damping(cmd.u, u_prev[i], config.damping_gain)
            lam_p[k, i] = f.lambda2
            status[k, i] = cmd.status.value

        gt = view(0, 0.0)
        lam_gt[k] = gt[2].lambda2
        d = gt[1].distances.copy()
        np.fill_diagonal(d, np.inf)
        dmin_series[k] = d.min()
        h_min[k] = dmin_series[k] ** 2 - config.d_min**2
        if area is not None:
            area[k] = covered_area(x, arena, config.r_sensing)
        pos_series[k] = x
        cmd_series[k] = u
        u_prev = u

        if unicycle:
            new_poses = []
            for i, pose in enumerate(poses):
                v, w = feedback_linearize(pose, u[i], config.offset)
                new_poses.append(step_unicycle(pose, v, w, dt, config.wheel_limit, config.axle_length))
            poses = new_poses
            x = np.array([p.offset_point(config.offset) for p in poses])
        else:
            x = step_single_integrator(x, u, dt)

    return TrialResult(seed, tuple(delays), t_series, lam_gt, lam_p, pos_series, cmd_series,
                       status.astype(str) if K else np.empty((0, N), dtype=str), h_min,
                       dmin_series, area, config.max_area)


@dataclass(frozen=True)
class BatchAggregate:
    mean: float
    std: float
    min: float
    per_trial: tuple[float, ...]
    seeds: tuple[int, ...]


class TrialFailed(RuntimeError):
    def __init__(self, index, seed, cause):
        super().__init__(f"trial {index} (seed {seed}) failed: {cause}")
        self.index = index
        self.seed = seed


def _trial_summary(args):
    config, seed = args
    return summary_row(run_trial(config, seed))


def summary_row(result: TrialResult) -> dict:
    return {"seed": result.seed, "min_lambda2": result.min_lambda2,
            "min_pair_dist": result.min_pair_dist,
            "mean_area_deviation_pct": result.mean_area_deviation_pct,
            "qp_infeasible_ticks": result.qp_infeasible_ticks}


def run_summaries(config: SimConfig, seeds, jobs: int = 1) -> list[dict]:
    """Run one trial per seed; results come back in seed order whatever ``jobs`` is."""
    seeds = list(seeds)
    tasks = [(config, s) for s in seeds]
    if jobs <= 1:
        out = []
        for idx, task in enumerate(tasks):
            try:
                out.append(_trial_summary(task))
            except Exception as exc:
                raise TrialFailed(idx, task[1], exc) from exc
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_trial_summary, task) for task in tasks]
        out = []
        for idx, fut in enumerate(futures):
            try:
                out.append(fut.result())
            except Exception as exc:
                raise TrialFailed(idx, seeds[idx], exc) from exc
        return out


def aggregate(values, seeds=()) -> BatchAggregate:
    v = np.asarray(values, dtype=np.float64)
    return BatchAggregate(float(v.mean()), float(v.std()), float(v.min()),
                          tuple(float(x) for x in v), tuple(seeds))


def run_batch(config: SimConfig, trials: int, base_seed: int = 0, jobs: int = 1) -> BatchAggregate:
    """Mean / population std / min of per-trial minimum lambda2 over consecutive seeds."""
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    seeds = range(base_seed, base_seed + trials)
    rows = run_summaries(config, seeds, jobs)
    return aggregate([r["min_lambda2"] for r in rows], tuple(seeds))


# --- export -----------------------------------------------------------------

TRACE_PREFIX = ["t", "lambda2_gt", "lambda2_min_perceived", "min_pair_dist", "covered_area"]
SUMMARY_COLUMNS = ["seed", "min_lambda2", "min_pair_dist", "mean_area_deviation_pct",
                   "qp_infeasible_ticks"]


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def trace_header(n_robots: int, dim: int = 2) -> list[str]:
    cols = list(TRACE_PREFIX)
    axes = "xyz"[:dim]
    for i in range(1, n_robots + 1):
        cols += [f"{a}{i}" for a in axes] + [f"u{a}{i}" for a in axes] + [f"qp_status{i}"]
    return cols


def trace_rows(result: TrialResult):
    N = result.positions.shape[1] if result.positions.ndim == 3 else result.lambda2_perceived.shape[1]
    for k in range(result.n_steps):
        row = [fmt(result.t[k]), fmt(result.lambda2_gt[k]), fmt(result.lambda2_perceived[k].min()),
               fmt(result.min_pair_dist_series[k]),
               fmt(result.covered_area[k]) if result.covered_area is not None else ""]
        for i in range(N):
            row += [fmt(c) for c in result.positions[k, i]]
            row += [fmt(c) for c in result.commands[k, i]]
            row.append(str(result.qp_status[k, i]))
        yield row


def atomic_write_text(path, text: str) -> Path:
    """Write through a temporary sibling file, then rename into place."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def atomic_write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return atomic_write_text(path, buf.getvalue())


def export_trial(result: TrialResult, out_dir) -> tuple[Path, Path]:
    """Write ``trace.csv`` and ``summary.csv`` for one trial into ``out_dir``."""
    out_dir = Path(out_dir)
    N = result.lambda2_perceived.shape[1]
    dim = result.positions.shape[2]
    trace = atomic_write_csv(out_dir / "trace.csv", trace_header(N, dim), trace_rows(result))
    s = summary_row(result)
    summary = atomic_write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS,
                               [[fmt(s[c]) for c in SUMMARY_COLUMNS]])
    return trace, summary


def read_trace(path) -> dict[str, list]:
    """Parse a ``trace.csv`` back into columns (floats, ``None`` for blanks, strings for status)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols: dict[str, list] = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, v in zip(header, row):
                if h.startswith("qp_status"):
                    cols[h].append(v)
                else:
                    cols[h].append(float(v) if v != "" else None)
    return cols
