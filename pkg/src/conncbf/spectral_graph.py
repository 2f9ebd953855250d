"""Weighted communication graph, algebraic connectivity and its gradient.

Robots within the communication radius ``R`` share an edge whose weight
decays smoothly from ``e^(R^4/sigma) - 1`` at zero distance to exactly
zero at ``R``.  The algebraic connectivity (second-smallest Laplacian
eigenvalue) and its Fiedler vector feed the connectivity constraint.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from conncbf._kernels import EigenConvergenceError, graph_kernel, jacobi_eigh

log = logging.getLogger(__name__)

CONNECTED_TOL = 1e-9
KERNEL_TOL = 1e-10
DEGENERACY_TOL = 1e-9
SIGN_TOL = 1e-9

__all__ = [
    "EigenConvergenceError",
    "FiedlerData",
    "SwarmState",
    "WeightedGraph",
    "build_graph",
    "connectivity_gradient",
    "default_sigma",
    "edge_weight",
    "edge_weight_gradient",
    "eigenvalue_gradient",
    "fiedler",
    "is_connected",
    "pairwise_distances",
]


@dataclass(frozen=True)
class SwarmState:
    """Positions of all robots at one instant; robot identity is the row index."""

    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[0] < 2 or pos.shape[1] not in (2, 3):
            raise ValueError(f"positions must be an (N>=2, 2|3) array, got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n_robots(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class WeightedGraph:
    distances: np.ndarray
    weights: np.ndarray
    laplacian: np.ndarray
    comm_radius: float
    sigma: float
    # inflation added to every off-diagonal distance before weighting
    inflation: float = 0.0

    # s_ij with d a_ij / d x_i = s_ij (x_i - x_j); zero off-edge and at d = 0
    slopes: np.ndarray | None = None


@dataclass(frozen=True)
class FiedlerData:
    lambda2: float
    v2: np.ndarray
    # |lambda2 - lambda3| below DEGENERACY_TOL: the gradient is not well defined
    degenerate: bool = False
    # full ascending spectrum and eigenvector columns, for near-crossing handling
    eigenvalues: np.ndarray | None = None
    eigenvectors: np.ndarray | None = None

    def near_modes(self, band: float) -> list[tuple[float, np.ndarray]]:
        """Eigenpairs above lambda2 lying within ``band`` of it (lambda2 itself excluded)."""
        if self.eigenvalues is None or band <= 0:
            return []
        return [(float(self.eigenvalues[k]), self.eigenvectors[:, k])
                for k in range(2, len(self.eigenvalues))
                if self.eigenvalues[k] - self.lambda2 <= band]


def default_sigma(R: float) -> float:
    """Normalisation that caps every edge weight at 1."""
    return R**4 / math.log(2.0)


def _check_scalar(name, value, positive=False):
    if not math.isfinite(value) or value < 0 or (positive and value == 0):
        kind = "positive" if positive else "non-negative"
        raise ValueError(f"{name} must be finite and {kind}, got {value!r}")


def edge_weight(d: float, R: float, sigma: float) -> float:
    _check_scalar("d", d)
    _check_scalar("R", R, positive=True)
    _check_scalar("sigma", sigma, positive=True)
    if d > R:
        return 0.0
    return math.expm1((R * R - d * d) ** 2 / sigma)


def edge_weight_gradient(xi, xj, R: float, sigma: float, inflation: float = 0.0) -> np.ndarray:
    """Gradient of the edge weight with respect to ``xi``.

    With ``inflation`` c > 0 the weight is evaluated at ``d + c`` and the
    chain rule runs through the inflated distance.  Coincident robots get
    a zero gradient: for c = 0 the formula vanishes there, for c > 0 the
    direction is undefined.
    """
    diff = np.asarray(xi, dtype=np.float64) - np.asarray(xj, dtype=np.float64)
    d = float(np.sqrt(diff @ diff))
    delta = d + inflation
    if delta > R or d == 0.0:
        return np.zeros_like(diff)
    gap = R * R - delta * delta
    # d a / d delta = -4 delta gap / sigma * e^(gap^2/sigma); d delta / d xi = diff / d
    return (-4.0 * gap / sigma * math.exp(gap * gap / sigma) * (delta / d)) * diff


def pairwise_distances(positions) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def build_graph(state: SwarmState, R: float, sigma: float | None = None,
                inflation: float = 0.0) -> WeightedGraph:
    """Distances, R-disk edge weights and Laplacian ``L = D - A``.

    ``inflation`` is added to every pairwise distance before weighting.
    """
    _check_scalar("R", R, positive=True)
    if sigma is None:
        sigma = default_sigma(R)
    _check_scalar("sigma", sigma, positive=True)
    _check_scalar("inflation", inflation)
    dist, w, lap, slopes = graph_kernel(state.positions, float(R), float(sigma), float(inflation))
    return WeightedGraph(dist, w, lap, float(R), float(sigma), float(inflation), slopes)


def fiedler(graph: WeightedGraph) -> FiedlerData:
    """Second-smallest Laplacian eigenpair, with a deterministic sign."""
    vals, vecs = jacobi_eigh(graph.laplacian)
    lam2 = max(float(vals[1]), 0.0)
    # the ones vector is an exact eigenvector, so a tiny lambda2 gap only
    # mixes v2 along it; projecting that out recovers the Fiedler direction
    v2 = vecs[:, 1] - vecs[:, 1].mean()
    if vals[1] <= KERNEL_TOL * max(1.0, abs(vals[-1])):
        # disconnected: the kernel holds more than the ones vector and v2 may
        # be (nearly) the ones vector itself
        v0 = vecs[:, 0] - vecs[:, 0].mean()
        v2 = max((v2, v0), key=np.linalg.norm)
    v2 /= np.linalg.norm(v2)
    nz = np.flatnonzero(np.abs(v2) > SIGN_TOL)
    if nz.size and v2[nz[0]] < 0:
        v2 = -v2
    degenerate = len(vals) > 2 and abs(vals[2] - vals[1]) < DEGENERACY_TOL
    if degenerate:
        log.debug("lambda2 has multiplicity > 1 (lambda3 - lambda2 = %.3g)", vals[2] - vals[1])
    return FiedlerData(lam2, v2, degenerate, vals, vecs)


def is_connected(graph: WeightedGraph, tol: float = CONNECTED_TOL) -> bool:
    return fiedler(graph).lambda2 > tol


def bfs_connected(weights) -> bool:
    """Reference connectivity test by breadth-first search over positive weights."""
    w = np.asarray(weights)
    n = w.shape[0]
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(w[i] > 0):
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return len(seen) == n


def connectivity_gradient(state: SwarmState, graph: WeightedGraph, fdata: FiedlerData) -> np.ndarray:
    """Per-robot gradient of lambda2, shape (N, n).

    Row i is ``sum_j d a_ij / d x_i * (v2_i - v2_j)^2`` over the neighbours of
    i.  Only squared Fiedler differences enter, so the sign of ``v2`` is
    irrelevant.
    """
    return eigenvalue_gradient(state, graph, fdata.v2)


def eigenvalue_gradient(state: SwarmState, graph: WeightedGraph, vec, robot: int | None = None) -> np.ndarray:
    """Gradient of the simple Laplacian eigenvalue with unit eigenvector ``vec``.

    Shape (N, n), or the single row of ``robot`` when given.
    """
    pos = state.positions
    v = np.asarray(vec)
    if robot is None:
        sq = (v[:, None] - v[None, :]) ** 2
        return np.einsum("ij,ijk->ik", graph.slopes * sq, pos[:, None, :] - pos[None, :, :])
    w = graph.slopes[robot] * (v[robot] - v) ** 2
    return w @ (pos[robot] - pos)
