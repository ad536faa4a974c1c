"""Hot loops: kNN graph edges, Voronoi edge clipping, shot-noise fields.

Each kernel has a numba version (``*_nb``) and a numpy version (``*_np``);
the public wrappers pick one via :func:`poisson_stein._accel.numba_enabled`.
Both versions produce per-item contributions in the same order and the
wrappers reduce with ``math.fsum``, so a total never depends on summation
order; the two backends differ at most by libm rounding in exp/pow.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit, numba_enabled

# ---------------------------------------------------------------------------
# k-nearest neighbours (points must already be in canonical order)


@njit
def _knn_table_nb(pts, k):
    n, d = pts.shape
    nbr = np.empty((n, k), dtype=np.int64)
    best_d = np.empty(k)
    best_j = np.empty(k, dtype=np.int64)
    for i in range(n):
        m = 0
        for j in range(n):
            if j == i:
                continue
            s = 0.0
            for a in range(d):
                diff = pts[i, a] - pts[j, a]
                s += diff * diff
            # insertion keeps (distance, index) ascending; ties go to the lower index
            if m < k:
                pos = m
                m += 1
            elif s < best_d[k - 1]:
                pos = k - 1
            else:
                continue
            while pos > 0 and best_d[pos - 1] > s:
                best_d[pos] = best_d[pos - 1]
                best_j[pos] = best_j[pos - 1]
                pos -= 1
            best_d[pos] = s
            best_j[pos] = j
        for a in range(k):
            nbr[i, a] = best_j[a]
    return nbr


def _knn_table_np(pts, k):
    n = pts.shape[0]
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.zeros((n, n))
    for a in range(pts.shape[1]):
        d2 += diff[:, :, a] * diff[:, :, a]
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


@njit
def _knn_edge_terms_nb(pts, nbr, alpha):
    n, k = nbr.shape
    d = pts.shape[1]
    out = np.zeros(n * k)
    for i in range(n):
        for a in range(k):
            j = nbr[i, a]
            mutual = False
            for b in range(k):
                if nbr[j, b] == i:
                    mutual = True
                    break
            if mutual and j < i:
                continue
            s = 0.0
            for c in range(d):
                diff = pts[i, c] - pts[j, c]
                s += diff * diff
            out[i * k + a] = 1.0 if alpha == 0.0 else math.sqrt(s) ** alpha
    return out


def _knn_edge_terms_np(pts, nbr, alpha):
    n, k = nbr.shape
    rows = np.repeat(np.arange(n), k)
    cols = nbr.ravel()
    mutual = (nbr[cols] == rows[:, None]).any(axis=1)
    keep = ~(mutual & (cols < rows))
    diff = pts[rows] - pts[cols]
    s = np.zeros(rows.shape[0])
    for c in range(pts.shape[1]):
        s += diff[:, c] * diff[:, c]
    vals = np.ones_like(s) if alpha == 0.0 else np.sqrt(s) ** alpha
    return np.where(keep, vals, 0.0)


def knn_table(pts: np.ndarray, k: int) -> np.ndarray:
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    return _knn_table_nb(pts, k) if numba_enabled() else _knn_table_np(pts, k)


def knn_edge_power(pts: np.ndarray, k: int, alpha: float) -> float:
    """Sum of ``|x - y|^alpha`` over edges of the kNN graph (canonical input order)."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if pts.shape[0] < k + 1:
        return 0.0
    if numba_enabled():
        terms = _knn_edge_terms_nb(pts, _knn_table_nb(pts, k), float(alpha))
    else:
        terms = _knn_edge_terms_np(pts, _knn_table_np(pts, k), float(alpha))
    return math.fsum(terms.tolist())


# ---------------------------------------------------------------------------
# Voronoi edges clipped to a box


@njit
def _clip_nb(px, py, dx, dy, smax, lo, hi):
    # Liang-Barsky on p + s*d, s in [0, smax]; returns the clipped length
    s0 = 0.0
    s1 = smax
    p0 = (px, py)
    dv = (dx, dy)
    for a in range(2):
        da = dv[a]
        pa = p0[a]
        if da == 0.0:
            if pa < lo[a] or pa > hi[a]:
                return 0.0
        else:
            ta = (lo[a] - pa) / da
            tb = (hi[a] - pa) / da
            if ta > tb:
                ta, tb = tb, ta
            if ta > s0:
                s0 = ta
            if tb < s1:
                s1 = tb
            if s0 >= s1:
                return 0.0
    return (s1 - s0) * math.sqrt(dx * dx + dy * dy)


@njit
def _voronoi_terms_nb(starts, dirs, smax, lo, hi):
    m = starts.shape[0]
    out = np.zeros(m)
    for e in range(m):
        out[e] = _clip_nb(starts[e, 0], starts[e, 1], dirs[e, 0], dirs[e, 1], smax[e], lo, hi)
    return out


def _voronoi_terms_np(starts, dirs, smax, lo, hi):
    m = starts.shape[0]
    s0 = np.zeros(m)
    s1 = smax.astype(float).copy()
    dead = np.zeros(m, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in range(2):
            da, pa = dirs[:, a], starts[:, a]
            flat = da == 0.0
            dead |= flat & ((pa < lo[a]) | (pa > hi[a]))
            ta = (lo[a] - pa) / da
            tb = (hi[a] - pa) / da
            lo_t = np.where(flat, -np.inf, np.minimum(ta, tb))
            hi_t = np.where(flat, np.inf, np.maximum(ta, tb))
            s0 = np.maximum(s0, lo_t)
            s1 = np.minimum(s1, hi_t)
            dead |= s0 >= s1
    length = (s1 - s0) * np.sqrt(dirs[:, 0] * dirs[:, 0] + dirs[:, 1] * dirs[:, 1])
    return np.where(dead, 0.0, length)


def clipped_lengths(starts, dirs, smax, lo, hi) -> np.ndarray:
    """Lengths of segments/rays ``start + s*dir, s in [0, smax]`` inside a 2D box."""
    starts = np.ascontiguousarray(starts, dtype=np.float64).reshape(-1, 2)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 2)
    smax = np.ascontiguousarray(smax, dtype=np.float64).reshape(-1)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if numba_enabled():
        return _voronoi_terms_nb(starts, dirs, smax, lo, hi)
    return _voronoi_terms_np(starts, dirs, smax, lo, hi)


# ---------------------------------------------------------------------------
# shot-noise field on a regular grid

KERNEL_OU = 0  # d=1: amp * exp(-rate * s) for 0 <= s <= R
KERNEL_BOX = 1  # amp for |s|_inf <= R
KERNEL_EXP_ORTHANT = 2  # amp * exp(-<rate, s>) on s >= 0 (componentwise), |s|_inf <= R


@njit(inline="always")
def _kernel_value(code, amp, rate, diff, R):
    d = diff.shape[0]
    if code == KERNEL_BOX:
        for a in range(d):
            if abs(diff[a]) > R:
                return 0.0
        return amp
    s = 0.0
    for a in range(d):
        if diff[a] < 0.0 or diff[a] > R:
            return 0.0
        s += rate[a] * diff[a]
    return amp * math.exp(-s)


@njit
def _field_nb(coords, marks, code, amp, rate, R, glo, h, shape):
    # X[node] = sum_points mark * f(node - point); nodes are glo + (idx + 1/2) h
    d = coords.shape[1]
    total = 1
    for a in range(d):
        total *= shape[a]
    X = np.zeros(total)
    ilo = np.empty(d, dtype=np.int64)
    ihi = np.empty(d, dtype=np.int64)
    idx = np.empty(d, dtype=np.int64)
    diff = np.empty(d)
    for p in range(coords.shape[0]):
        empty = False
        for a in range(d):
            lo = math.ceil((coords[p, a] - R - glo[a]) / h[a] - 0.5)
            hi = math.floor((coords[p, a] + R - glo[a]) / h[a] - 0.5)
            if lo < 0:
                lo = 0
            if hi > shape[a] - 1:
                hi = shape[a] - 1
            if lo > hi:
                empty = True
            ilo[a] = lo
            ihi[a] = hi
            idx[a] = lo
        if empty:
            continue
        while True:
            flat = 0
            for a in range(d):
                diff[a] = glo[a] + (idx[a] + 0.5) * h[a] - coords[p, a]
                flat = flat * shape[a] + idx[a]
            X[flat] += marks[p] * _kernel_value(code, amp, rate, diff, R)
            a = d - 1
            while a >= 0:
                idx[a] += 1
                if idx[a] <= ihi[a]:
                    break
                idx[a] = ilo[a]
                a -= 1
            if a < 0:
                break
    return X


def grid_nodes(glo, h, shape) -> np.ndarray:
    axes = [glo[a] + (np.arange(shape[a]) + 0.5) * h[a] for a in range(len(shape))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _kernel_value_np(code, amp, rate, diff, R):
    if code == KERNEL_BOX:
        return np.where(np.all(np.abs(diff) <= R, axis=-1), amp, 0.0)
    inside = np.all((diff >= 0.0) & (diff <= R), axis=-1)
    s = np.zeros(diff.shape[:-1])
    for a in range(diff.shape[-1]):
        s += rate[a] * diff[..., a]
    return np.where(inside, amp * np.exp(-np.where(inside, s, 0.0)), 0.0)


def _field_np(coords, marks, code, amp, rate, R, glo, h, shape, kernel_fn=None):
    nodes = grid_nodes(glo, h, shape)
    X = np.zeros(nodes.shape[0])
    # accumulate point by point so the summation order matches the numba loop
    for p in range(coords.shape[0]):
        near = np.all(np.abs(nodes - coords[p]) <= R + 1e-12 * max(1.0, R), axis=1)
        if not near.any():
            continue
        diff = nodes[near] - coords[p]
        if kernel_fn is None:
            vals = _kernel_value_np(code, amp, rate, diff, R)
        else:
            vals = np.where(np.all(np.abs(diff) <= R, axis=1), kernel_fn(diff), 0.0)
        X[near] += marks[p] * vals
    return X


def shot_noise_field(coords, marks, code, amp, rate, R, glo, h, shape, kernel_fn=None) -> np.ndarray:
    """Uncompensated field ``sum u f(node - x)`` on the grid, flattened in C order."""
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    marks = np.ascontiguousarray(marks, dtype=np.float64)
    rate = np.ascontiguousarray(rate, dtype=np.float64)
    glo = np.ascontiguousarray(glo, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.int64)
    if kernel_fn is None and numba_enabled():
        return _field_nb(coords, marks, code, float(amp), rate, float(R), glo, h, shape)
    return _field_np(coords, marks, code, amp, rate, R, glo, h, shape, kernel_fn)
