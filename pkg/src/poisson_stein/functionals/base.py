from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

from ..point_process import IntensityModel, PointConfiguration


class DegenerateFunctional(ValueError):
    """Raised when a functional has (estimated) zero variance."""


@dataclass(frozen=True)
class FunctionalSpec:
    """A named Poisson functional ``F = f(eta)``.

    ``eval`` must be deterministic and depend only on the multiset of points.
    ``first_chaos`` marks linear statistics, whose second differences vanish
    identically; estimators use it to return exact zeros instead of float
    noise, and ``point_value`` (when given) returns the summand ``f(x)`` for
    inserted points so that ``D_x F`` is exact rather than a difference of two
    rounded sums.  ``mean``, ``variance`` and ``central_moment4`` are analytic values
    of the unstandardized F when known.
    """

    name: str
    eval: Callable[[PointConfiguration], float]
    padding_radius: float = 0.0
    locality_radius_hint: Callable | None = None
    first_chaos: bool = False
    point_value: Callable | None = None
    mean: float | None = None
    variance: float | None = None
    central_moment4: float | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, config: PointConfiguration) -> float:
        return float(self.eval(config))

    @property
    def has_analytic_moments(self) -> bool:
        return self.mean is not None and self.variance is not None

    def standardized(self, mean: float, variance: float) -> "FunctionalSpec":
        """Return ``(F - mean) / sqrt(variance)``."""
        if not variance > 0:
            raise DegenerateFunctional(f"{self.name}: variance {variance} is not positive")
        sd = math.sqrt(variance)
        inner = self.eval

        def ev(config):
            return (inner(config) - mean) / sd

        m4 = None if self.central_moment4 is None else self.central_moment4 / variance**2
        std_mean = None if self.mean is None else (self.mean - mean) / sd
        std_var = None if self.variance is None else self.variance / variance
        pv = self.point_value
        return replace(
            self,
            name=f"{self.name}[std]",
            eval=ev,
            point_value=None if pv is None else (lambda c, m=None: pv(c, m) / sd),
            mean=std_mean,
            variance=std_var,
            central_moment4=m4,
            params={**self.params, "_standardization": (mean, variance)},
        )

    def affine(self, a: float, b: float) -> "FunctionalSpec":
        inner = self.eval
        pv = self.point_value
        return replace(
            self,
            name=f"{self.name}[affine]",
            eval=lambda c: a * inner(c) + b,
            point_value=None if pv is None else (lambda c, m=None: a * pv(c, m)),
            mean=None if self.mean is None else a * self.mean + b,
            variance=None if self.variance is None else a * a * self.variance,
            central_moment4=None if self.central_moment4 is None else a**4 * self.central_moment4,
        )


def constant_functional(value: float = 0.0) -> FunctionalSpec:
    return FunctionalSpec("constant", lambda c: value, first_chaos=True,
                          point_value=lambda c, m=None: 0.0, mean=value, variance=0.0,
                          central_moment4=0.0, params={"value": value})


@dataclass(frozen=True)
class Family:
    """Registry entry: builds ``(FunctionalSpec, IntensityModel)`` for a given t."""

    name: str
    build: Callable[[dict, float], tuple[FunctionalSpec, IntensityModel]]
    schema: dict
    description: str = ""
    defaults: dict = field(default_factory=dict)

    def __call__(self, t: float, **params):
        return self.build({**self.defaults, **params}, t)


_REGISTRY: dict[str, Family] = {}
_EXTENSIONS: dict[str, Family] = {}


def register(family: Family, extension: bool = False) -> Family:
    (_EXTENSIONS if extension else _REGISTRY)[family.name] = family
    return family


def get_family(name: str) -> Family:
    if name in _REGISTRY:
        return _REGISTRY[name]
    if name in _EXTENSIONS:
        return _EXTENSIONS[name]
    raise KeyError(f"unknown functional {name!r}; known: {sorted(_REGISTRY) + sorted(_EXTENSIONS)}")


def registry() -> dict[str, Family]:
    return dict(_REGISTRY)


def extensions() -> dict[str, Family]:
    return dict(_EXTENSIONS)


def build(name: str, params: dict | None, t: float):
    fam = get_family(name)
    p = {**fam.defaults, **(params or {})}
    unknown = set(p) - set(fam.schema)
    if unknown:
        raise KeyError(f"functional {name!r} got unknown parameters {sorted(unknown)}")
    return fam.build(p, t)
