"""Desired (pre-filter) velocities: the disconnecting ray and Lloyd coverage."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from conncbf.spectral_graph import SwarmState, build_graph, fiedler, pairwise_distances

RASTER_STEP = 0.01
TIE_JITTER = 1e-9
# reference maximum covered area for 3 robots, eps = 0.3, R_sensing = 0.75 m
REFERENCE_MAX_AREA = 3.68


@dataclass(frozen=True)
class Arena:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_hi > self.x_lo and self.y_hi > self.y_lo):
            raise ValueError(f"arena must have positive area: {self}")

    @classmethod
    def square(cls, side: float, center=(0.0, 0.0)) -> Arena:
        cx, cy = center
        h = 0.5 * side
        return cls(cx - h, cx + h, cy - h, cy + h)

    @property
    def area(self) -> float:
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * (self.x_lo + self.x_hi), 0.5 * (self.y_lo + self.y_hi)])

    def polygon(self) -> np.ndarray:
        return np.array([[self.x_lo, self.y_lo], [self.x_hi, self.y_lo],
                         [self.x_hi, self.y_hi], [self.x_lo, self.y_hi]])

    def contains(self, p, tol: float = 1e-12) -> bool:
        return (self.x_lo - tol <= p[0] <= self.x_hi + tol) and (self.y_lo - tol <= p[1] <= self.y_hi + tol)


@dataclass(frozen=True)
class VoronoiCell:
    owner: int
    vertices: np.ndarray  # counter-clockwise
    degenerate: bool = False

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


@dataclass(frozen=True)
class CoverageParams:
    r_sensing: float = 0.75
    k_cov: float = 1.0
    max_area: float = REFERENCE_MAX_AREA

    def __post_init__(self):
        if not (self.r_sensing > 0 and self.k_cov > 0):
            raise ValueError("r_sensing and k_cov must be positive")


def disconnecting_velocity(i: int, n_robots: int, k: float) -> np.ndarray:
    """Constant outward ray of robot ``i`` (1-based), angle ``2 pi i / (N + 1)``."""
    if not 1 <= i <= n_robots:
        raise ValueError(f"robot index {i} outside 1..{n_robots}")
    if not k > 0:
        raise ValueError(f"gain k must be positive, got {k}")
    ang = 2.0 * math.pi * i / (n_robots + 1)
    return k * np.array([math.cos(ang), math.sin(ang)])


def polygon_area(vertices) -> float:
    v = np.asarray(vertices)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _clip_halfplane(poly, normal, offset):
    """Keep the part of a convex polygon where ``normal . q <= offset``."""
    out = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        fp = normal @ p - offset
        fq = normal @ q - offset
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return out


def _untie(sites):
    sites = np.array(sites, dtype=np.float64)
    for j in range(1, len(sites)):
        for i in range(j):
            if np.array_equal(sites[i], sites[j]):
                ang = 2.0 * math.pi * j / len(sites)
                sites[j] = sites[j] + TIE_JITTER * np.array([math.cos(ang), math.sin(ang)])
                break
    return sites


def voronoi_partition(sites, arena: Arena) -> list[VoronoiCell]:
    """Bounded Voronoi cells of ``sites`` inside the arena rectangle.

    Each cell is the arena clipped by the bisector half-planes against every
    other site.  Exactly coincident sites are separated by a deterministic
    1e-9 m jitter; if all sites coincide a single flagged cell covering the
    whole arena is returned.
    """
    sites = np.asarray(sites, dtype=np.float64)
    if len(sites) == 0:
        raise ValueError("need at least one site")
    if len(sites) > 1 and np.all(sites == sites[0]):
        warnings.warn("all Voronoi sites coincide; returning the whole arena", RuntimeWarning,
                      stacklevel=2)
        return [VoronoiCell(0, arena.polygon(), degenerate=True)]
    sites = _untie(sites)
    box = [p for p in arena.polygon()]
    cells = []
    for i, xi in enumerate(sites):
        poly = box
        for j, xj in enumerate(sites):
            if j == i:
                continue
            normal = xj - xi
            poly = _clip_halfplane(poly, normal, normal @ (0.5 * (xi + xj)))
            if not poly:
                break
        cells.append(VoronoiCell(i, np.array(poly).reshape(-1, 2)))
    return cells


def cell_centroid(cell: VoronoiCell) -> np.ndarray:
    v = np.asarray(cell.vertices)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-15:
        raise ValueError(f"cell of robot {cell.owner} has zero area")
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def _cell_of(cells, i):
    for c in cells:
        if c.owner == i:
            return c
    # all-coincident partition: everyone shares the single cell
    return cells[0]


def coverage_velocity(i: int, sites, arena: Arena, params: CoverageParams,
                      cells: list[VoronoiCell] | None = None) -> np.ndarray:
    """Lloyd step: chase the centroid of robot ``i``'s cell (0-based index)."""
    sites = np.asarray(sites, dtype=np.float64)
    if cells is None:
        cells = voronoi_partition(sites, arena)
    return params.k_cov * (cell_centroid(_cell_of(cells, i)) - sites[i])


def polar_moment(vertices, point) -> float:
    """``integral over polygon of |q - point|^2 dq`` by fan triangulation."""
    v = np.asarray(vertices) - np.asarray(point)
    total = 0.0
    for k in range(len(v)):
        a, b = v[k], v[(k + 1) % len(v)]
        tri = 0.5 * (a[0] * b[1] - a[1] * b[0])
        total += tri / 6.0 * (a @ a + b @ b + a @ b)
    return total


def coverage_cost(sites, arena: Arena) -> float:
    sites = np.asarray(sites, dtype=np.float64)
    return sum(polar_moment(c.vertices, sites[c.owner]) for c in voronoi_partition(sites, arena))


def covered_area(sites, arena: Arena, r_sensing: float, step: float = RASTER_STEP) -> float:
    """Area of the union of sensing disks inside the arena, on a fixed raster."""
    sites = np.asarray(sites, dtype=np.float64).reshape(-1, 2)
    nx = max(1, int(round((arena.x_hi - arena.x_lo) / step)))
    ny = max(1, int(round((arena.y_hi - arena.y_lo) / step)))
    hx = (arena.x_hi - arena.x_lo) / nx
    hy = (arena.y_hi - arena.y_lo) / ny
    lo = sites.min(axis=0) - r_sensing
    hi = sites.max(axis=0) + r_sensing
    ix0 = max(0, int(math.floor((lo[0] - arena.x_lo) / hx)))
    ix1 = min(nx, int(math.ceil((hi[0] - arena.x_lo) / hx)))
    iy0 = max(0, int(math.floor((lo[1] - arena.y_lo) / hy)))
    iy1 = min(ny, int(math.ceil((hi[1] - arena.y_lo) / hy)))
    if ix0 >= ix1 or iy0 >= iy1:
        return 0.0
    xs = arena.x_lo + (np.arange(ix0, ix1) + 0.5) * hx
    ys = arena.y_lo + (np.arange(iy0, iy1) + 0.5) * hy
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    hit = np.zeros(gx.shape, dtype=bool)
    r2 = r_sensing * r_sensing
    for sx, sy in sites:
        hit |= (gx - sx) ** 2 + (gy - sy) ** 2 <= r2
    return float(hit.sum()) * hx * hy


def estimate_max_covered_area(n_robots: int, epsilon: float, arena: Arena, r_sensing: float,
                              R: float = 1.0, d_min: float = 0.25, samples: int = 4000,
                              refine_steps: int = 400, seed: int = 0) -> tuple[float, np.ndarray]:
    """Brute-force estimate of the largest area coverable with ``lambda2 >= epsilon``.

    Random search over connected configurations followed by a shrinking
    random-perturbation hill climb.  A sanity check on the reference value,
    not part of any controller.
    """
    rng = np.random.default_rng(seed)
    span = np.array([arena.x_hi - arena.x_lo, arena.y_hi - arena.y_lo])
    lo = np.array([arena.x_lo, arena.y_lo])

    def feasible(p):
        d = pairwise_distances(p)
        np.fill_diagonal(d, np.inf)
        if d.min() < d_min:
            return False
        return fiedler(build_graph(SwarmState(p), R)).lambda2 >= epsilon

    best, best_area = None, -1.0
    for _ in range(samples):
        p = lo + rng.random((n_robots, 2)) * span
        if feasible(p):
            a = covered_area(p, arena, r_sensing, step=0.02)
            if a > best_area:
                best, best_area = p, a
    if best is None:
        raise RuntimeError("no feasible configuration sampled")
    scale = 0.1
    for k in range(refine_steps):
        cand = best + rng.normal(scale=scale, size=best.shape)
        cand = np.clip(cand, lo, lo + span)
        if feasible(cand):
            a = covered_area(cand, arena, r_sensing, step=0.02)
            if a > best_area:
                best, best_area = cand, a
        if k % 100 == 99:
            scale *= 0.5
    return covered_area(best, arena, r_sensing), best
