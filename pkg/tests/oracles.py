"""Independent reference computations used by the tests."""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc


def laplacian_from_positions(pos, R, sigma, inflation=0.0):
    """Dense Laplacian assembled entry by entry in plain Python floats."""
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = float(np.sqrt(np.sum((pos[i] - pos[j]) ** 2))) + inflation
            if d <= R:
                w = np.exp((R * R - d * d) ** 2 / sigma) - 1.0
                L[i, j] = -w
                L[i, i] += w
    return L


def lambda2_oracle(L):
    return float(np.linalg.eigvalsh(L)[1])


def bfs_components(weights):
    w = np.asarray(weights)
    n = len(w)
    seen = [False] * n
    seen[0] = True
    q = deque([0])
    while q:
        i = q.popleft()
        for j in range(n):
            if w[i, j] > 0 and not seen[j]:
                seen[j] = True
                q.append(j)
    return all(seen)


def fd_gradient(f, x, h=1e-6):
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def qp_enumeration(G, h, u0, tol=1e-9):
    """Minimiser of 0.5|u - u0|^2 s.t. G u >= h by trying every active set.

    For each subset of at most n independent rows solve the equality
    constrained projection, keep those that are primal feasible with
    non-negative multipliers, and return the closest.  None if infeasible.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    m, n = G.shape
    best, best_obj = None, np.inf
    for k in range(0, n + 1):
        for S in itertools.combinations(range(m), k):
            if k:
                A = G[list(S)]
                M = A @ A.T
                if np.linalg.matrix_rank(M, tol=1e-10) < k:
                    continue
                lam = np.linalg.solve(M, h[list(S)] - A @ u0)
                if np.any(lam < -tol):
                    continue
                u = u0 + A.T @ lam
            else:
                u = u0.copy()
            if np.all(G @ u - h >= -tol * (1 + np.abs(h))):
                obj = float(np.sum((u - u0) ** 2))
                if obj < best_obj:
                    best, best_obj = u, obj
    return best


def min_max_violation(G, h, lower, upper):
    """Smallest uniform relaxation t with {G u >= h - t} meeting the box, via LP."""
    m, n = G.shape
    res = linprog(np.r_[np.zeros(n), 1.0], A_ub=np.hstack([-G, -np.ones((m, 1))]), b_ub=-h,
                  bounds=list(zip(lower, upper)) + [(None, None)], method="highs")
    return float(res.x[-1])


def polygon_mc_centroid(vertices, n_samples, rng):
    """Sampled centroid of a convex polygon from uniform points in its fan triangles.

    Points come from a scrambled Sobol sequence, so the estimate converges
    far faster than plain pseudo-random sampling.
    """
    v = np.asarray(vertices, dtype=float)
    a, b, c = v[0], v[1:-1], v[2:]
    areas = 0.5 * np.abs((b[:, 0] - a[0]) * (c[:, 1] - a[1]) - (b[:, 1] - a[1]) * (c[:, 0] - a[0]))
    cum = np.cumsum(areas) / areas.sum()
    q = qmc.Sobol(3, seed=rng).random_base2(int(np.ceil(np.log2(n_samples))))
    k = np.minimum(np.searchsorted(cum, q[:, 0], side="right"), len(areas) - 1)
    r1, r2 = q[:, 1], q[:, 2]
    flip = r1 + r2 > 1
    r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
    pts = a + r1[:, None] * (b[k] - a) + r2[:, None] * (c[k] - a)
    return pts.mean(axis=0)


def point_in_convex(poly, p, tol=1e-9):
    v = np.asarray(poly)
    for k in range(len(v)):
        a, b = v[k], v[(k + 1) % len(v)]
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < -tol:
            return False
    return True
