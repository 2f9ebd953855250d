"""Per-robot minimally intrusive CBF quadratic program.

Each robot projects its desired velocity onto the set cut out by its own
share of the connectivity constraint, the pairwise collision constraints
and the input box.  The projection is solved with a dual active-set
method (identity Hessian), which starts from the unconstrained optimum
``u_des`` and so returns it untouched whenever it is already feasible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from conncbf._kernels import dual_active_set
from conncbf.spectral_graph import FiedlerData, SwarmState

FEAS_TOL = 1e-12
MAX_ITER = 200
RELAX_MARGIN = 1e-9


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    CLIPPED_INFEASIBLE = "clipped_infeasible"


class DecentralSplit(str, Enum):
    PER_CAPITA = "per_capita"
    LITERAL = "literal"


@dataclass(frozen=True)
class CbfParams:
    epsilon: float = 0.3
    d_min: float = 0.25
    alpha_connectivity: float = 1.0
    alpha_collision: float = 1.0
    decentral_split: DecentralSplit = DecentralSplit.PER_CAPITA

    def __post_init__(self):
        for name in ("epsilon", "d_min", "alpha_connectivity", "alpha_collision"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")
        object.__setattr__(self, "decentral_split", DecentralSplit(self.decentral_split))


@dataclass(frozen=True)
class Row:
    """Linear inequality ``a . u >= b``."""

    a: np.ndarray
    b: float


@dataclass
class QpSpec:
    u_des: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rows: list[Row] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.u_des)


@dataclass
class ControlCommand:
    u: np.ndarray
    status: QpStatus
    # indices into spec.rows, then lower bounds 0..n-1, then upper bounds 0..n-1
    active_constraints: tuple[int, ...] = ()
    multipliers: np.ndarray | None = None


def connectivity_row(fdata: FiedlerData, grad_i, n_robots: int, params: CbfParams) -> Row:
    """Robot i's share of ``grad(lambda2) . u >= -alpha (lambda2 - epsilon)``."""
    return eigenvalue_row(fdata.lambda2, grad_i, n_robots, params)


def eigenvalue_row(lam: float, grad_i, n_robots: int, params: CbfParams) -> Row:
    """Same barrier condition for any Laplacian eigenvalue branch ``lam >= epsilon``."""
    b = -params.alpha_connectivity * (lam - params.epsilon)
    if params.decentral_split is DecentralSplit.PER_CAPITA:
        b /= n_robots
    return Row(np.array(grad_i, dtype=np.float64), float(b))


def collision_rows(i: int, state: SwarmState, params: CbfParams) -> list[Row]:
    """Half of each pairwise ``d^2 - d_min^2`` barrier condition, for neighbours within ``2 d_min``."""
    diff = state.positions[i] - state.positions
    d2 = np.einsum("ij,ij->i", diff, diff)
    near = np.flatnonzero(d2 <= (2.0 * params.d_min) ** 2)
    half_gain = 0.5 * params.alpha_collision
    return [Row(2.0 * diff[j], -half_gain * (float(d2[j]) - params.d_min**2))
            for j in near if j != i]


def _constraint_matrix(spec: QpSpec):
    n = spec.dim
    m = len(spec.rows)
    G = np.empty((m + 2 * n, n))
    h = np.empty(m + 2 * n)
    for k, r in enumerate(spec.rows):
        G[k] = r.a
        h[k] = r.b
    G[m:m + n] = np.eye(n)
    G[m + n:] = -np.eye(n)
    h[m:m + n] = spec.lower
    h[m + n:] = -spec.upper
    return G, h


def _validate(spec: QpSpec, G, h):
    if any(np.shape(r.a) != (spec.dim,) for r in spec.rows):
        raise ValueError("row dimension does not match the decision variable")
    if not (np.isfinite(G).all() and np.isfinite(h).all() and np.isfinite(spec.u_des).all()):
        raise ValueError("QP data must be finite")
    if np.any(spec.lower >= spec.upper):
        raise ValueError("box lower bounds must be below upper bounds")


def _dual_active_set(G, h, u0):
    """Projection of ``u0`` onto ``G u >= h``; ``(u, active, mult)`` or None when infeasible."""
    u, active, mult, status = dual_active_set(G, h, u0, FEAS_TOL, MAX_ITER)
    if status == 1:
        return None
    if status == 2:
        raise RuntimeError(f"active-set QP did not finish in {MAX_ITER} iterations")
    return u, active, mult


def _min_max_violation(G, h, lower, upper):
    """Box point minimising the largest violation ``max_j (h_j - G_j u)``; returns ``(t, u)``."""
    m, n = G.shape
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([-G, -np.ones((m, 1))])
    bounds = [(lo, hi) for lo, hi in zip(lower, upper)] + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=-h, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"minimum-violation LP failed: {res.message}")
    return float(res.x[-1]), res.x[:n]


def solve_qp(spec: QpSpec) -> ControlCommand:
    """Project ``u_des`` onto the rows and the box.

    When the rows cannot be met inside the box, every row is relaxed by the
    smallest uniform amount that makes them jointly feasible and the
    projection is taken onto that relaxed set instead.
    """
    G, h = _constraint_matrix(spec)
    _validate(spec, G, h)
    u0 = np.asarray(spec.u_des, dtype=np.float64)
    res = _dual_active_set(G, h, u0)
    status = QpStatus.OPTIMAL
    if res is None:
        status = QpStatus.CLIPPED_INFEASIBLE
        m = len(spec.rows)
        t, u_lp = _min_max_violation(G[:m], h[:m], spec.lower, spec.upper)
        # a hair of extra slack keeps the relaxed set from being a zero-width sliver
        relaxed = h.copy()
        relaxed[:m] -= t + RELAX_MARGIN * (1.0 + abs(t)) * max(1.0, float(np.abs(G[:m]).max()))
        res = _dual_active_set(G, relaxed, u0)
        if res is None:
            # degenerate geometry: fall back to the LP minimiser itself
            res = (u_lp, np.zeros(0, dtype=np.int64), np.zeros(0))
    u, active, mult = res
    u = np.clip(u, spec.lower, spec.upper)
    full_mult = np.zeros(len(h))
    full_mult[active] = mult
    return ControlCommand(u, status, tuple(sorted(int(k) for k in active)), full_mult)


def kkt_residual(spec: QpSpec, cmd: ControlCommand) -> float:
    """Stationarity residual ``|u - u_des - G^T mu|_inf`` of a returned command."""
    G, _ = _constraint_matrix(spec)
    return float(np.max(np.abs(cmd.u - spec.u_des - G.T @ cmd.multipliers)))


def box_spec(u_des, u_max: float, rows=()) -> QpSpec:
    u_des = np.asarray(u_des, dtype=np.float64)
    return QpSpec(u_des, np.full(len(u_des), -u_max), np.full(len(u_des), u_max), list(rows))


def filter_command(i: int, u_des_i, fdata: FiedlerData, grad_i, delayed: SwarmState,
                   params: CbfParams, u_max: float, near_modes=()) -> ControlCommand:
    """Full decentralised controller of robot i on its own (delayed, inflated) view.

    ``near_modes`` holds ``(lambda_k, grad_k_i)`` pairs for eigenvalues close
    to lambda2; each gets its own row so a branch about to cross below
    lambda2 is already constrained.
    """
    n = delayed.n_robots
    rows = [connectivity_row(fdata, grad_i, n, params)]
    rows += [eigenvalue_row(lam, g, n, params) for lam, g in near_modes]
    rows += collision_rows(i, delayed, params)
    return solve_qp(box_spec(u_des_i, u_max, rows))
