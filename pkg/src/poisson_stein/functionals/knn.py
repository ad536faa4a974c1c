"""Edge-power sums of the k-nearest-neighbour graph."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..point_process import DomainError, IntensityModel, PointConfiguration, Window
from .base import Family, FunctionalSpec, register


@dataclass(frozen=True)
class KnnParams:
    k: int = 1
    alpha: float = 0.0
    observation_window: Window | None = None

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise DomainError("k must be a positive integer")
        if not self.alpha >= 0:
            raise DomainError("alpha must be nonnegative")


def _canonical(coords: np.ndarray) -> np.ndarray:
    if coords.shape[0] == 0:
        return coords
    order = np.lexsort([coords[:, i] for i in range(coords.shape[1] - 1, -1, -1)])
    return coords[order]


def knn_edge_power_value(coords, k: int, alpha: float, warn: bool = True) -> float:
    pts = _canonical(np.asarray(coords, dtype=float))
    if pts.shape[0] < k + 1:
        if warn and pts.shape[0] > 1:
            warnings.warn(f"kNN graph undefined for {pts.shape[0]} points with k={k}; returning 0",
                          RuntimeWarning, stacklevel=3)
        return 0.0
    return kernels.knn_edge_power(pts, k, alpha)


def knn_edge_power(params: KnnParams, scale: float = 1.0) -> FunctionalSpec:
    """``scale * L^(alpha)``: half the sum over ordered pairs joined in the kNN graph.

    Points outside ``observation_window`` (when given) are ignored.
    """
    k, alpha = int(params.k), float(params.alpha)
    win = params.observation_window

    def ev(config: PointConfiguration) -> float:
        c = config.coords
        if win is not None:
            c = c[win.contains(c)] if len(c) else c
        return scale * knn_edge_power_value(c, k, alpha)

    def radius_hint(x, config):
        return knn_stabilization_radius(config, x, k)

    return FunctionalSpec(
        f"knn(k={k},alpha={alpha:g})",
        ev,
        locality_radius_hint=radius_hint,
        params={"k": k, "alpha": alpha, "scale": scale},
    )


def _neighbours(pts: np.ndarray, i: int, k: int) -> np.ndarray:
    """Indices of the k nearest points to pts[i] (ties to the lower index)."""
    d2 = np.sum((pts - pts[i]) ** 2, axis=1)
    d2[i] = np.inf
    return np.argsort(d2, kind="stable")[:k]


def knn_stabilization_radius(config: PointConfiguration, x, k: int) -> float:
    """Radius R(x, mu) beyond which inserting x cannot change the kNN graph locally.

    Max of (i) |z1 - z2| over z1 in mu that gain x as a k-NN, with z2 a current
    k-NN of z1, and (ii) the distance from x to its own k-th nearest neighbour.
    """
    mu = _canonical(np.asarray(config.coords, dtype=float))
    n = mu.shape[0]
    if n < k:
        raise DomainError(f"stabilization radius needs at least k={k} points, got {n}")
    x = np.asarray(x, dtype=float).reshape(-1)
    dx = np.sqrt(np.sum((mu - x) ** 2, axis=1))
    r = float(np.sort(dx)[k - 1])
    if n < 2:
        return r
    plus = np.vstack([mu, x[None, :]])
    kk = min(k, n - 1)
    for i in range(n):
        if n in _neighbours(plus, i, min(k, n)):
            for j in _neighbours(mu, i, kk):
                r = max(r, float(np.sqrt(np.sum((mu[i] - mu[j]) ** 2))))
    return r


def _default_window(dim):
    return Window.cube(1.0, dim)


def _build(params, t):
    dim = int(params.get("dim", 2))
    k = int(params.get("k", 1))
    alpha = float(params.get("alpha", 0.0))
    H = _default_window(dim)
    # t^{alpha/d} L_t has variance of order t
    scale = t ** (alpha / dim) if params.get("rescale", True) else 1.0
    spec = knn_edge_power(KnnParams(k, alpha, None), scale=scale)
    return spec, IntensityModel(H, float(t))


register(Family(
    "knn",
    _build,
    schema={"k": "int >= 1", "alpha": "float >= 0", "dim": "int (window [0,1]^dim)",
            "rescale": "bool: multiply by t^(alpha/dim)"},
    description="sum of alpha-th powers of kNN graph edge lengths for a Poisson process of intensity t in [0,1]^d",
    defaults={"k": 1, "alpha": 0.0, "dim": 2, "rescale": True},
))

__all__ = ["KnnParams", "knn_edge_power", "knn_edge_power_value", "knn_stabilization_radius"]
