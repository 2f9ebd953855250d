"""Delayed state sharing and the worst-case distance inflation heuristic."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from conncbf.spectral_graph import FiedlerData, SwarmState, WeightedGraph, build_graph, fiedler


class StateUnavailableError(LookupError):
    pass


@dataclass(frozen=True)
class DelayAssignment:
    per_robot_delay: tuple[float, ...]
    max_delay: float
    variable: bool


@dataclass(frozen=True)
class HeuristicParams:
    v_max: float = 0.2
    tau: float = 0.0
    kappa: float = 0.04
    enabled: bool = True

    def __post_init__(self):
        if not self.v_max > 0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")
        if self.tau < 0 or self.kappa < 0:
            raise ValueError("tau and kappa must be non-negative")

    @property
    def inflation(self) -> float:
        """Distance added to every measured inter-robot distance."""
        if not self.enabled:
            return 0.0
        return 2.0 * self.v_max * (self.tau + self.kappa)


def assign_delays(n_robots: int, max_delay: float, variable: bool, rng_seed) -> DelayAssignment:
    """Per-robot communication delays.

    Fixed mode gives every robot ``max_delay``.  Variable mode draws each
    delay uniformly on ``[0, max_delay]`` and then forces one randomly
    chosen robot to the maximum.
    """
    if n_robots < 2:
        raise ValueError(f"need at least 2 robots, got {n_robots}")
    if not max_delay >= 0:
        raise ValueError(f"max_delay must be non-negative, got {max_delay}")
    if not variable:
        return DelayAssignment((float(max_delay),) * n_robots, float(max_delay), False)
    rng = np.random.default_rng(rng_seed)
    delays = rng.uniform(0.0, max_delay, size=n_robots)
    delays[rng.integers(n_robots)] = max_delay
    return DelayAssignment(tuple(float(x) for x in delays), float(max_delay), True)


class StateHistory:
    """Fixed-capacity ring buffer of swarm snapshots sampled every ``dt``.

    Single writer (the simulation loop); stored states are immutable so
    readers can hold on to them.
    """

    def __init__(self, dt: float, max_delay: float = 0.0):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = float(dt)
        self.capacity = int(np.ceil(max_delay / dt - 1e-9)) + 1
        self._buf: deque[SwarmState] = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._buf)

    def append(self, state: SwarmState) -> None:
        if self._buf:
            last = self._buf[-1].time
            if not state.time > last:
                raise ValueError(f"history times must increase: {state.time} after {last}")
            if abs(state.time - last - self.dt) > 1e-9 * max(1.0, state.time):
                raise ValueError(f"history must be uniformly spaced by dt={self.dt}")
        self._buf.append(state)

    def lag(self, steps: int) -> SwarmState:
        """State ``steps`` ticks back, clamped to the oldest stored record."""
        if not self._buf:
            raise StateUnavailableError("state history is empty")
        return self._buf[-1 - min(steps, len(self._buf) - 1)]

    @property
    def latest(self) -> SwarmState:
        return self.lag(0)


def delay_steps(tau: float, dt: float) -> int:
    # half-up rounding; Python's round() would send 0.5 to 0
    return int(np.floor(tau / dt + 0.5 + 1e-9))


def delayed_state(history: StateHistory, tau_i: float, now: float | None = None) -> SwarmState:
    """Snapshot robot i works with at ``now``: the state ``round(tau_i/dt)`` ticks old.

    ``now`` defaults to the newest record's time; the history never
    extrapolates, so early queries fall back to the oldest record.
    """
    if not len(history):
        raise StateUnavailableError("state history is empty")
    k = delay_steps(tau_i, history.dt)
    if now is not None:
        k += delay_steps(history.latest.time - now, history.dt)
    return history.lag(max(k, 0))


def heuristic_distance(d: float, params: HeuristicParams) -> float:
    if d < 0:
        raise ValueError(f"distance must be non-negative, got {d}")
    return d + params.inflation


def perceived_graph(delayed: SwarmState, params: HeuristicParams, R: float,
                    sigma: float | None = None) -> tuple[WeightedGraph, FiedlerData]:
    """Graph and Fiedler pair built from inflated distances of a delayed snapshot."""
    graph = build_graph(delayed, R, sigma, inflation=params.inflation)
    return graph, fiedler(graph)
