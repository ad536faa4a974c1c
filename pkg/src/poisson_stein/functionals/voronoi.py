"""Planar Voronoi statistics observed through a box.

The tessellation is the dual of the Delaunay triangulation (Qhull via
scipy).  Each Delaunay edge contributes the segment between the circumcentres
of its two triangles, or a ray for hull edges; segments are clipped to the
observation window.  Vertex counts are circumcentres inside the window; a
cocircular quadruple yields two coincident vertices joined by a zero-length
edge, which is exactly what a symbolic perturbation of the input produces.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .. import kernels
from ..point_process import DomainError, IntensityModel, PointConfiguration, Window
from .base import Family, FunctionalSpec, register

STATISTICS = ("edge_length", "vertex_count")


@dataclass(frozen=True)
class VoronoiParams:
    observation_window: Window
    statistic: str = "edge_length"

    def __post_init__(self):
        if self.observation_window.dim != 2:
            raise DomainError("Voronoi statistics are implemented for d = 2 only")
        if self.statistic not in STATISTICS:
            raise DomainError(f"statistic must be one of {STATISTICS}")


def _canonical(pts):
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return pts
    return pts[np.lexsort((pts[:, 1], pts[:, 0]))]


def _box_gap(pts, lo, hi):
    gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    return np.hypot(gap[:, 0], gap[:, 1])


def _relevant(pts, window: Window, m: int = 32):
    """Generators that can own a cell meeting the window.

    ``d(y, eta)`` is 1-Lipschitz, so its maximum over the window is at most the
    maximum over an m x m cell-centre grid plus half a cell diagonal.  Every
    window point's nearest generator lies within that radius of the window,
    hence the diagram inside the window is unchanged by dropping the rest.
    Distances to a subset are never smaller, so the radius may be bounded
    using only the points near the window.
    """
    if pts.shape[0] <= 4 * m:
        return pts
    lo, hi = window.lo, window.hi
    gap = _box_gap(pts, lo, hi)
    n_in = int(np.count_nonzero(gap == 0.0))
    r0 = 4.0 * math.sqrt(window.volume / (n_in + 1))
    near = gap <= r0
    sub = pts[near] if np.count_nonzero(near) >= 3 else pts
    step = (hi - lo) / m
    axes = [lo[a] + (np.arange(m) + 0.5) * step[a] for a in range(2)]
    gx, gy = np.meshgrid(*axes, indexing="ij")
    dist, _ = cKDTree(sub).query(np.stack([gx.ravel(), gy.ravel()], axis=1))
    rho = float(dist.max()) + 0.5 * float(np.hypot(*step))
    rho = rho * (1.0 + 1e-9) + 1e-12
    if rho <= r0 and sub is not pts:
        return sub[gap[near] <= rho]
    return pts[gap <= rho]


def _circumcentres(pts, simplices):
    # vertices of each triangle sorted by index so the centre is a function of the vertex set
    s = np.sort(simplices, axis=1)
    a, b, c = pts[s[:, 0]], pts[s[:, 1]], pts[s[:, 2]]
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    d = 2.0 * (bx * cy - by * cx)
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = (cy * b2 - by * c2) / d
        uy = (bx * c2 - cx * b2) / d
    return np.stack([a[:, 0] + ux, a[:, 1] + uy], axis=1)


def _collinear_edges(pts):
    """Voronoi edges of collinear generators: full bisector lines of consecutive points."""
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] < 2:
        return np.empty((0, 2)), np.empty((0, 2)), np.empty(0)
    direction = uniq[-1] - uniq[0]
    proj = uniq @ direction
    uniq = uniq[np.argsort(proj, kind="stable")]
    mids = 0.5 * (uniq[1:] + uniq[:-1])
    normal = np.array([-direction[1], direction[0]])
    normal = normal / np.hypot(*normal)
    # a line is two opposite rays from the midpoint
    starts = np.concatenate([mids, mids])
    dirs = np.concatenate([np.tile(normal, (len(mids), 1)), np.tile(-normal, (len(mids), 1))])
    return starts, dirs, np.full(len(starts), np.inf)


def _voronoi_pieces(pts):
    """Segments/rays of the Voronoi diagram as (starts, dirs, smax) plus circumcentres."""
    try:
        tri = Delaunay(pts)
    except QhullError:
        s, d, m = _collinear_edges(pts)
        return s, d, m, np.empty((0, 2))
    simp, nbrs = tri.simplices, tri.neighbors
    cc = _circumcentres(pts, simp)
    m = simp.shape[0]
    tri_idx = np.repeat(np.arange(m), 3)
    opp = nbrs.ravel()
    corner = np.tile(np.arange(3), m)
    inner = opp > tri_idx
    starts_in = cc[tri_idx[inner]]
    dirs_in = cc[opp[inner]] - starts_in
    hull = opp == -1
    th, ch = tri_idx[hull], corner[hull]
    v_opp = simp[th, ch]
    e1 = simp[th, (ch + 1) % 3]
    e2 = simp[th, (ch + 2) % 3]
    lo_e, hi_e = np.minimum(e1, e2), np.maximum(e1, e2)
    edge = pts[hi_e] - pts[lo_e]
    normal = np.stack([-edge[:, 1], edge[:, 0]], axis=1)
    # orient away from the opposite vertex
    side = np.einsum("ij,ij->i", normal, pts[v_opp] - pts[lo_e])
    normal = np.where((side > 0)[:, None], -normal, normal)
    starts = np.concatenate([starts_in, cc[th]])
    dirs = np.concatenate([dirs_in, normal])
    smax = np.concatenate([np.ones(starts_in.shape[0]), np.full(th.shape[0], np.inf)])
    return starts, dirs, smax, cc


def voronoi_edge_length(coords, window: Window) -> float:
    pts = _canonical(_relevant(np.asarray(coords, dtype=float).reshape(-1, 2), window))
    if pts.shape[0] < 2:
        if pts.shape[0] == 1:
            warnings.warn("Voronoi diagram of a single generator has no edges", RuntimeWarning, stacklevel=2)
        return 0.0
    starts, dirs, smax, _ = _voronoi_pieces(pts)
    if starts.shape[0] == 0:
        return 0.0
    return math.fsum(kernels.clipped_lengths(starts, dirs, smax, window.lo, window.hi).tolist())


def voronoi_vertex_count(coords, window: Window) -> int:
    pts = _canonical(_relevant(np.asarray(coords, dtype=float).reshape(-1, 2), window))
    if pts.shape[0] < 3:
        warnings.warn("fewer than 3 generators: no Voronoi vertices", RuntimeWarning, stacklevel=2)
        return 0
    _, _, _, cc = _voronoi_pieces(pts)
    if cc.shape[0] == 0:
        return 0
    return int(np.count_nonzero(window.contains(cc)))


def default_padding(t: float, dim: int = 2, factor: float = 5.0) -> float:
    """``factor * t^{-1/d} * log t`` (at least ``factor * t^{-1/d}``)."""
    return factor * t ** (-1.0 / dim) * max(1.0, math.log(t))


def voronoi_statistic(params: VoronoiParams, scale: float = 1.0, padding_radius: float = 0.0) -> FunctionalSpec:
    """``scale *`` total edge length (or vertex count) of the Voronoi diagram inside the window."""
    win = params.observation_window
    stat = params.statistic
    fn = voronoi_edge_length if stat == "edge_length" else voronoi_vertex_count

    def ev(config: PointConfiguration) -> float:
        return scale * float(fn(config.coords, win))

    return FunctionalSpec(
        f"voronoi2d({stat})",
        ev,
        padding_radius=padding_radius,
        params={"statistic": stat, "scale": scale, "observation_window": win.to_dict()},
    )


def _build(params, t):
    stat = params.get("statistic", "edge_length")
    H = Window.cube(1.0, 2)
    pad = params.get("padding")
    if pad is None:
        pad = default_padding(t, 2, float(params.get("padding_factor", 5.0)))
    # t^{i/d} V^{(k,i)}: i = 1 for edge length, 0 for vertices
    scale = math.sqrt(t) if (stat == "edge_length" and params.get("rescale", True)) else 1.0
    spec = voronoi_statistic(VoronoiParams(H, stat), scale=scale, padding_radius=pad)
    return spec, IntensityModel(H.dilate(pad), float(t))


register(Family(
    "voronoi2d",
    _build,
    schema={"statistic": "edge_length | vertex_count", "padding": "float or null (auto)",
            "padding_factor": "float (auto padding = factor * t^-1/2 * log t)",
            "rescale": "bool: multiply edge length by sqrt(t)"},
    description="Poisson-Voronoi edge length / vertex count in [0,1]^2, sampled on a padded box",
    defaults={"statistic": "edge_length", "padding": None, "padding_factor": 5.0, "rescale": True},
))
