"""Compiled inner loops: R-disk graph assembly and the cyclic Jacobi eigensolver."""
import numpy as np
from numba import njit

OFF_TOL = 1e-12
MAX_SWEEPS = 100


@njit(cache=True)
def _jacobi_kernel(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    scale = max(1.0, np.sqrt(scale))

    sweeps = 0
    while True:
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        if np.sqrt(off) <= tol * scale:
            return v, sweeps, True
        if sweeps >= max_sweeps:
            return v, sweeps, False
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq


class EigenConvergenceError(ArithmeticError):
    def __init__(self, sweeps):
        super().__init__(f"Jacobi eigensolver did not converge after {sweeps} sweeps")
        self.sweeps = sweeps


def jacobi_eigh(matrix, tol=OFF_TOL, max_sweeps=MAX_SWEEPS):
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted ascending, eigenvectors
    as columns. Ties keep the solver's original column order.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 1:
        return a.diagonal().copy(), np.ones((1, 1))
    v, sweeps, ok = _jacobi_kernel(a, tol, max_sweeps)
    if not ok:
        raise EigenConvergenceError(sweeps)
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


@njit(cache=True)
def graph_kernel(pos, R, sigma, inflation):
    """Distances, weights, Laplacian and weight slopes of the R-disk graph.

    ``slopes[i, j]`` is s with ``d a_ij / d x_i = s (x_i - x_j)``, the weight
    being evaluated at the inflated distance ``d + inflation``.
    """
    n, dim = pos.shape
    dist = np.zeros((n, n))
    w = np.zeros((n, n))
    lap = np.zeros((n, n))
    slopes = np.zeros((n, n))
    R2 = R * R
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(dim):
                t = pos[i, k] - pos[j, k]
                s += t * t
            d = np.sqrt(s)
            dist[i, j] = d
            dist[j, i] = d
            delta = d + inflation
            if delta <= R:
                gap = R2 - delta * delta
                e = np.exp(gap * gap / sigma)
                a = e - 1.0 if gap * gap / sigma > 1e-5 else np.expm1(gap * gap / sigma)
                w[i, j] = a
                w[j, i] = a
                if a > 0.0 and d > 0.0:
                    sl = -4.0 * gap / sigma * e * delta / d
                    slopes[i, j] = sl
                    slopes[j, i] = sl
    for i in range(n):
        deg = 0.0
        for j in range(n):
            deg += w[i, j]
            lap[i, j] = -w[i, j]
        lap[i, i] = deg
    return dist, w, lap, slopes


@njit(cache=True)
def dual_active_set(G, h, u0, feas_tol, max_iter):
    """Minimise ``0.5 |u - u0|^2`` s.t. ``G u >= h`` (Goldfarb-Idnani, identity Hessian).

    Returns ``(u, active, mult, status)`` with status 0 solved, 1 infeasible,
    2 iteration cap reached.
    """
    m, n = G.shape
    u = u0.copy()
    active = np.empty(n, dtype=np.int64)
    mult = np.empty(n)
    na = 0
    scale = 1.0 + np.abs(h)
    for _ in range(max_iter):
        p = -1
        worst = -feas_tol
        for j in range(m):
            s = 0.0
            for k in range(n):
                s += G[j, k] * u[k]
            v = (s - h[j]) / scale[j]
            if v < worst:
                worst = v
                p = j
        if p < 0:
            return u, active[:na].copy(), mult[:na].copy(), 0
        gp = G[p]
        mult_p = 0.0
        while True:
            s_p = gp @ u - h[p]
            z = gp.copy()
            r = np.zeros(na)
            if na > 0:
                Na = np.empty((n, na))
                for c in range(na):
                    Na[:, c] = G[active[c]]
                # active normals stay linearly independent, so N^T N is invertible
                r = np.linalg.solve(Na.T @ Na, Na.T @ gp)
                z = gp - Na @ r
            zz = z @ gp
            # a full active set spans the space: z is round-off only
            if na < n and zz > 1e-12 * (gp @ gp):
                full = -s_p / zz
            else:
                full = np.inf
            partial = np.inf
            block = -1
            for c in range(na):
                if r[c] > 1e-14:
                    ratio = mult[c] / r[c]
                    if ratio < partial:
                        partial = ratio
                        block = c
            step = min(full, partial)
            if np.isinf(step):
                return u, active[:na].copy(), mult[:na].copy(), 1
            if np.isfinite(full):
                u = u + step * z
            for c in range(na):
                mult[c] -= step * r[c]
            mult_p += step
            if full <= partial:
                active[na] = p
                mult[na] = mult_p
                na += 1
                break
            for c in range(block, na - 1):
                active[c] = active[c + 1]
                mult[c] = mult[c + 1]
            na -= 1
    return u, active[:na].copy(), mult[:na].copy(), 2
