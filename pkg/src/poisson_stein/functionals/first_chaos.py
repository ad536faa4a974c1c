"""Linear statistics ``I_1(f) = sum_{x in eta} f(x) - int f d(lambda)``."""

from __future__ import annotations

import math

import numpy as np

from ..point_process import IntensityModel, Window
from .base import Family, FunctionalSpec, register


def first_chaos(f, compensator: float, *, marked: bool = False, l2_sq: float | None = None,
                l4_4: float | None = None, name: str = "first_chaos", params=None) -> FunctionalSpec:
    """Build the compensated linear statistic of ``f``.

    ``f`` maps an ``(n, d)`` coordinate array (and the mark array when
    ``marked``) to ``n`` values.  ``l2_sq = int f^2 dlambda`` and
    ``l4_4 = int f^4 dlambda`` enable the analytic variance and fourth central
    moment ``3 l2_sq^2 + l4_4``.
    """

    def ev(config):
        if len(config) == 0:
            return -compensator
        vals = f(config.coords, config.marks) if marked else f(config.coords)
        return math.fsum(np.asarray(vals, dtype=float).ravel().tolist()) - compensator

    def pv(coords, marks=None):
        c = np.asarray(coords, dtype=float)
        vals = f(c, marks) if marked else f(c)
        return math.fsum(np.asarray(vals, dtype=float).ravel().tolist())

    m4 = None
    if l2_sq is not None and l4_4 is not None:
        m4 = 3.0 * l2_sq**2 + l4_4
    return FunctionalSpec(
        name,
        ev,
        first_chaos=True,
        point_value=pv,
        mean=0.0,
        variance=l2_sq,
        central_moment4=m4,
        params=dict(params or {}),
    )


def rescaled_poisson(t: float):
    """f_t(x) = t^{-1/2} 1{x <= t} on R_+ with Lebesgue intensity.

    F_t is a centred Poisson(t) variable divided by sqrt(t); only points in
    [0, t] matter, so the sampling window is that interval at rate 1.
    """
    amp = 1.0 / math.sqrt(t)
    window = Window((0.0,), (float(t),))
    spec = first_chaos(
        lambda c: np.full(c.shape[0], amp),
        compensator=t * amp,
        l2_sq=1.0,
        l4_4=1.0 / t,
        name="first_chaos",
        params={"profile": "rescaled_poisson", "t": t},
    )
    return spec, IntensityModel(window, 1.0)


def _build(params, t):
    profile = params.get("profile", "rescaled_poisson")
    if profile == "rescaled_poisson":
        return rescaled_poisson(t)
    if profile == "constant":
        c = float(params.get("value", 1.0))
        dim = int(params.get("dim", 1))
        model = IntensityModel(Window.cube(1.0, dim), t)
        spec = first_chaos(lambda x: np.full(x.shape[0], c), c * t, l2_sq=c * c * t,
                           l4_4=c**4 * t, params=dict(params))
        return spec, model
    raise KeyError(f"unknown first_chaos profile {profile!r}")


register(Family(
    "first_chaos",
    _build,
    schema={"profile": "rescaled_poisson | constant", "value": "float (constant profile)",
            "dim": "int (constant profile)"},
    description="compensated linear statistic; rescaled_poisson is the centred Poisson(t)/sqrt(t) baseline",
    defaults={"profile": "rescaled_poisson"},
))
