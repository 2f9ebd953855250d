"""Robot kinematics: single integrator and feedback-linearised differential drive."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

# Khepera IV class wheel base
AXLE_LENGTH = 0.105


class DynamicsMode(str, Enum):
    SINGLE_INTEGRATOR = "single_integrator"
    UNICYCLE = "unicycle"


@dataclass(frozen=True)
class UnicyclePose:
    position: np.ndarray
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def offset_point(self, b: float) -> np.ndarray:
        """Point at distance ``b`` ahead of the axle; the linearised output."""
        return self.position + b * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass(frozen=True)
class DynamicsParams:
    mode: DynamicsMode = DynamicsMode.SINGLE_INTEGRATOR
    dt: float = 0.1
    u_max: float = 0.2
    offset: float = 0.1
    wheel_limit: float = 0.2
    axle_length: float = AXLE_LENGTH
    damping_gain: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", DynamicsMode(self.mode))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.mode is DynamicsMode.UNICYCLE and not self.offset > 0:
            raise ValueError("unicycle mode needs a positive offset")
        if not 0.0 <= self.damping_gain < 1.0:
            raise ValueError(f"damping_gain must lie in [0, 1), got {self.damping_gain}")


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(float(theta), 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def step_single_integrator(x, u, dt: float) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) + np.asarray(u, dtype=np.float64) * dt


def feedback_linearize(pose: UnicyclePose, u_cart, b: float) -> tuple[float, float]:
    """Unicycle commands that make the offset point move with velocity ``u_cart``."""
    if not b > 0:
        raise ValueError(f"offset b must be positive, got {b}")
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    ux, uy = float(u_cart[0]), float(u_cart[1])
    return c * ux + s * uy, (-s * ux + c * uy) / b


def wheel_speeds(v: float, omega: float, axle: float = AXLE_LENGTH) -> tuple[float, float]:
    half = 0.5 * axle
    return v - half * omega, v + half * omega


def step_unicycle(pose: UnicyclePose, v: float, omega: float, dt: float,
                  wheel_limit: float = 0.2, axle: float = AXLE_LENGTH) -> UnicyclePose:
    """Saturate the wheels, then integrate the exact circular arc over ``dt``."""
    left, right = wheel_speeds(v, omega, axle)
    left = min(max(left, -wheel_limit), wheel_limit)
    right = min(max(right, -wheel_limit), wheel_limit)
    v = 0.5 * (left + right)
    omega = (right - left) / axle
    th = pose.heading
    half = 0.5 * omega * dt
    # chord of the arc, written with sinc so tiny turn rates do not cancel
    chord = v * dt * np.sinc(half / math.pi)
    dx = chord * np.array([math.cos(th + half), math.sin(th + half)])
    return UnicyclePose(pose.position + dx, th + omega * dt)


def apply_damping(u_new, u_prev, damping_gain: float) -> np.ndarray:
    """First-order low-pass on successive velocity commands."""
    if not 0.0 <= damping_gain < 1.0:
        raise ValueError(f"damping_gain must lie in [0, 1), got {damping_gain}")
    u_new = np.asarray(u_new, dtype=np.float64)
    if damping_gain == 0.0:
        return u_new
    return (1.0 - damping_gain) * u_new + damping_gain * np.asarray(u_prev, dtype=np.float64)
