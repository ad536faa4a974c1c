"""Integrated non-linear functionals of Poisson shot noise.

The field is ``X_s = sum_{(u, x) in eta} u f(s - x) - t * int u nu(du) * int f``
and the functional is the midpoint-rule integral of ``phi(X_s)`` over a box.
The grid belongs to the functional: difference operators act on the
discretized F, which is the random variable the CLT harness samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .. import kernels
from ..point_process import DomainError, IntensityModel, MarkMeasure, PointConfiguration, Window
from .base import Family, FunctionalSpec, register


@dataclass(frozen=True)
class Kernel:
    """Moving-average kernel ``f`` with support inside ``|s|_inf <= truncation_radius``.

    Named kernels (``ou``, ``exp_orthant``, ``box``) run in the compiled field
    kernel; a custom ``fn`` (vectorized over ``(m, d)`` offsets) uses numpy.
    """

    name: str
    dim: int
    truncation_radius: float
    amp: float = 1.0
    rate: tuple = (1.0,)
    fn: Callable | None = field(default=None, compare=False)
    integral: float | None = None  # analytic int f over the truncated support
    integral_sq: float | None = None

    def __post_init__(self):
        if not self.truncation_radius > 0:
            raise DomainError("truncation radius must be positive")
        if self.name == "custom" and self.fn is None:
            raise DomainError("custom kernel needs fn")

    @classmethod
    def ou(cls, rate: float = 1.0, amp: float = 1.0, truncation_radius: float = 12.0) -> "Kernel":
        """``amp * exp(-rate s) 1{s >= 0}`` in d = 1 (Ornstein-Uhlenbeck-Levy)."""
        R = truncation_radius
        i1 = amp * (1.0 - math.exp(-rate * R)) / rate
        i2 = amp * amp * (1.0 - math.exp(-2.0 * rate * R)) / (2.0 * rate)
        return cls("ou", 1, R, amp, (float(rate),), integral=i1, integral_sq=i2)

    @classmethod
    def exp_orthant(cls, rates, amp: float = 1.0, truncation_radius: float = 12.0) -> "Kernel":
        rates = tuple(float(r) for r in rates)
        R = truncation_radius
        i1 = amp * math.prod((1.0 - math.exp(-r * R)) / r for r in rates)
        i2 = amp * amp * math.prod((1.0 - math.exp(-2.0 * r * R)) / (2.0 * r) for r in rates)
        return cls("exp_orthant", len(rates), R, amp, rates, integral=i1, integral_sq=i2)

    @classmethod
    def box(cls, radius: float, dim: int = 1, amp: float = 1.0) -> "Kernel":
        vol = (2.0 * radius) ** dim
        return cls("box", dim, radius, amp, (0.0,) * dim, integral=amp * vol, integral_sq=amp * amp * vol)

    @classmethod
    def custom(cls, fn, dim: int, truncation_radius: float, integral=None, integral_sq=None) -> "Kernel":
        return cls("custom", dim, truncation_radius, fn=fn, integral=integral, integral_sq=integral_sq)

    @property
    def code(self) -> int:
        return {"ou": kernels.KERNEL_OU, "box": kernels.KERNEL_BOX,
                "exp_orthant": kernels.KERNEL_EXP_ORTHANT}.get(self.name, -1)

    def __call__(self, offsets) -> np.ndarray:
        s = np.atleast_2d(np.asarray(offsets, dtype=float))
        if self.fn is not None:
            vals = np.asarray(self.fn(s), dtype=float)
            return np.where(np.all(np.abs(s) <= self.truncation_radius, axis=1), vals, 0.0)
        rate = np.broadcast_to(np.asarray(self.rate, dtype=float), (self.dim,))
        return kernels._kernel_value_np(self.code, self.amp, rate, s, self.truncation_radius)

    def quadrature_integral(self, power: int = 1) -> float:
        R = self.truncation_radius
        if self.dim == 1:
            pts = [0.0] if self.name in ("ou", "exp_orthant") else None
            val, _ = integrate.quad(lambda s: float(self(np.array([[s]]))[0]) ** power, -R, R,
                                    points=pts, limit=400)
            return float(val)
        # midpoint rule on a fine grid for d >= 2
        m = 400 if self.dim == 2 else 60
        axis = -R + (np.arange(m) + 0.5) * (2 * R / m)
        mesh = np.stack([g.ravel() for g in np.meshgrid(*([axis] * self.dim), indexing="ij")], axis=1)
        return float(np.sum(self(mesh) ** power) * (2 * R / m) ** self.dim)


@dataclass(frozen=True)
class ShotNoiseParams:
    kernel: Kernel
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable | None
    d2phi: Callable | None
    rho_window: Window
    h: float
    marks: MarkMeasure = field(default_factory=MarkMeasure.none)
    compensator: str = "analytic"  # or "quadrature"
    intensity: float = 1.0

    def __post_init__(self):
        if not self.h > 0:
            raise DomainError("grid step must be positive")
        if self.kernel.dim != self.rho_window.dim:
            raise DomainError("kernel and window dimensions differ")
        if self.compensator not in ("analytic", "quadrature"):
            raise DomainError("compensator mode must be 'analytic' or 'quadrature'")


class ShotNoiseGrid:
    """Midpoint grid on the integration window (cell counts rounded up)."""

    def __init__(self, window: Window, h: float):
        sides = window.sides
        self.shape = tuple(max(1, int(math.ceil(s / h - 1e-9))) for s in sides)
        if any(s <= 0 for s in self.shape):
            raise DomainError("grid has no nodes")
        self.step = sides / np.asarray(self.shape, dtype=float)
        self.lower = window.lo
        self.cell_volume = float(np.prod(self.step))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def nodes(self) -> np.ndarray:
        return kernels.grid_nodes(self.lower, self.step, self.shape)


def shot_noise_compensator(params: ShotNoiseParams) -> float:
    k = params.kernel
    if params.compensator == "analytic" and k.integral is not None:
        fint = k.integral
    else:
        fint = k.quadrature_integral(1)
    return params.intensity * params.marks.moment(1) * fint


def field_function(params: ShotNoiseParams):
    """Return ``config -> X`` at the grid nodes (compensated, C order)."""
    grid = ShotNoiseGrid(params.rho_window, params.h)
    k = params.kernel
    comp = shot_noise_compensator(params)
    rate = np.broadcast_to(np.asarray(k.rate, dtype=float), (k.dim,)).copy()

    def field_values(config: PointConfiguration) -> np.ndarray:
        if len(config):
            cfg = config.sorted()
            X = kernels.shot_noise_field(cfg.coords, cfg.mark_values, k.code, k.amp, rate,
                                         k.truncation_radius, grid.lower, grid.step, grid.shape, k.fn)
        else:
            X = np.zeros(grid.n_nodes)
        return X - comp

    return field_values


def shot_noise_functional(params: ShotNoiseParams) -> FunctionalSpec:
    grid = ShotNoiseGrid(params.rho_window, params.h)
    field_values = field_function(params)
    phi = params.phi

    def ev(config: PointConfiguration) -> float:
        vals = np.asarray(phi(field_values(config)), dtype=float)
        return math.fsum((vals * grid.cell_volume).tolist())

    return FunctionalSpec(
        f"shot_noise({params.kernel.name})",
        ev,
        padding_radius=params.kernel.truncation_radius,
        params={"kernel": params.kernel.name, "h": params.h, "n_nodes": grid.n_nodes},
    )


def sampling_model(params: ShotNoiseParams) -> IntensityModel:
    """Intensity on the integration window dilated by the kernel's truncation radius."""
    return IntensityModel(params.rho_window.dilate(params.kernel.truncation_radius),
                          params.intensity, params.marks)


PHIS = {
    "identity": (lambda r: r, lambda r: np.ones_like(r), lambda r: np.zeros_like(r)),
    "r_plus_sin": (lambda r: r + np.sin(r), lambda r: 1.0 + np.cos(r), lambda r: -np.sin(r)),
    "square": (lambda r: r * r, lambda r: 2.0 * r, lambda r: np.full_like(r, 2.0)),
    "cube": (lambda r: r**3, lambda r: 3.0 * r * r, lambda r: 6.0 * r),
}


def _build(params, t):
    """Moving average over W_T = [0, T]^d with T = t (d = 1 OU kernel by default)."""
    name = params.get("phi", "r_plus_sin")
    phi, dphi, d2phi = PHIS[name]
    dim = int(params.get("dim", 1))
    kname = params.get("kernel", "ou")
    R = float(params.get("truncation", 12.0))
    rate = float(params.get("rate", 1.0))
    if kname == "ou":
        kern = Kernel.ou(rate, truncation_radius=R) if dim == 1 else Kernel.exp_orthant([rate] * dim, truncation_radius=R)
    elif kname == "box":
        kern = Kernel.box(float(params.get("radius", 0.5)), dim)
    else:
        raise KeyError(f"unknown kernel {kname!r}")
    marks = MarkMeasure.from_dict(params.get("marks"))
    side = float(t) ** (1.0 / dim)
    sp = ShotNoiseParams(kern, phi, dphi, d2phi, Window.cube(side, dim), float(params.get("h", 0.5)),
                         marks, params.get("compensator", "analytic"), float(params.get("intensity", 1.0)))
    return shot_noise_functional(sp), sampling_model(sp)


register(Family(
    "shot_noise",
    _build,
    schema={"phi": f"one of {sorted(PHIS)}", "kernel": "ou | box", "rate": "float", "radius": "float (box)",
            "truncation": "float", "dim": "int", "h": "grid step", "intensity": "points per unit volume",
            "marks": "mark measure JSON", "compensator": "analytic | quadrature"},
    description="int_{[0,T]^d} phi(X_s) ds for a compensated Poisson moving average, T = t",
    defaults={"phi": "r_plus_sin", "kernel": "ou", "rate": 1.0, "truncation": 12.0, "dim": 1, "h": 0.5,
              "intensity": 1.0, "marks": None, "compensator": "analytic"},
))
