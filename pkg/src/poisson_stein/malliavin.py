"""Difference operators and Mehler's thinning semigroup.

Inserted points are given as coordinate vectors for unmarked configurations
and as ``(coords, mark)`` pairs for marked ones.

``P_s F(eta) = E f(eta^(s) + zeta)`` where ``eta^(s)`` is an s-thinning of
``eta`` and ``zeta`` an independent Poisson process with intensity
``(1 - s) lambda``.  Integrals over s are Gauss-Legendre rules.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .functionals.base import FunctionalSpec
from .parallel import pmap
from .point_process import (
    DomainError,
    IntensityModel,
    PointConfiguration,
    RngStream,
    as_generator,
    sample_poisson,
)


class PreconditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# inserted points


def split_point(base: PointConfiguration, x):
    """Return ``(coords (1, d), marks (1,) or None)`` for one inserted point."""
    if base.marks is None:
        return np.asarray(x, dtype=float).reshape(1, base.dim), None
    try:
        coords, mark = x
    except (TypeError, ValueError):
        raise DomainError("marked configurations need inserted points as (coords, mark)") from None
    return np.asarray(coords, dtype=float).reshape(1, base.dim), np.array([float(mark)])


def _insert(base: PointConfiguration, *xs) -> PointConfiguration:
    if not xs:
        return base
    parts = [split_point(base, x) for x in xs]
    coords = np.concatenate([base.coords] + [c for c, _ in parts])
    if base.marks is None:
        return PointConfiguration(coords, base.window)
    marks = np.concatenate([base.marks] + [m for _, m in parts])
    return PointConfiguration(coords, base.window, marks)


def _check_inside(base: PointConfiguration, *xs):
    for x in xs:
        c, _ = split_point(base, x)
        if not base.window.contains(c)[0]:
            raise DomainError(f"inserted point {c[0].tolist()} lies outside the window")


# ---------------------------------------------------------------------------
# difference operators


def diff1(functional: FunctionalSpec, base: PointConfiguration, x, f_base: float | None = None) -> float:
    """``D_x F = f(eta + delta_x) - f(eta)``."""
    _check_inside(base, x)
    if functional.point_value is not None:
        c, m = split_point(base, x)
        return float(functional.point_value(c, m))
    f0 = functional(base) if f_base is None else f_base
    return functional(_insert(base, x)) - f0


def diff2(functional: FunctionalSpec, base: PointConfiguration, x1, x2) -> float:
    """Second difference, evaluated as ``D_{x1} F(eta + delta_{x2}) - D_{x1} F(eta)``."""
    _check_inside(base, x1, x2)
    if functional.first_chaos:
        return 0.0
    f0 = functional(base)
    f1 = functional(_insert(base, x1))
    f2 = functional(_insert(base, x2))
    f12 = functional(_insert(base, x1, x2))
    return (f12 - f2) - (f1 - f0)


# ---------------------------------------------------------------------------
# Mehler operator


@dataclass(frozen=True)
class MehlerEstimate:
    value: float
    std_error: float
    s: float
    n_inner: int
    samples: np.ndarray = field(default=None, repr=False, compare=False)


def _mean_se(vals) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=float)
    n = vals.shape[0]
    mean = math.fsum(vals.tolist()) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum(((vals - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def _thin_replenish(base: PointConfiguration, model: IntensityModel, s: float, gen):
    """One draw of ``eta^(s) + zeta``; also returns the generator for extra coins."""
    keep = gen.random(len(base)) < s
    kept = base.restrict(keep)
    if s >= 1.0:
        return kept
    fresh = sample_poisson(model.with_t((1.0 - s) * model.t), gen)
    if len(fresh) == 0:
        return kept
    if kept.marks is None:
        return PointConfiguration(np.concatenate([kept.coords, fresh.coords]), base.window)
    return PointConfiguration(np.concatenate([kept.coords, fresh.coords]), base.window,
                              np.concatenate([kept.marks, fresh.marks]))


def _check_s(s):
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s must lie in [0, 1], got {s}")


def mehler_samples(fn, base, model, s, n_inner, rng, threads=None) -> np.ndarray:
    """``fn(eta^(s) + zeta)`` for ``n_inner`` independent draws (stream ``rng.child(j)``)."""
    _check_s(s)
    stream = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))

    def one(j):
        return float(fn(_thin_replenish(base, model, s, stream.child(j).generator())))

    return np.asarray(pmap(one, range(n_inner), threads))


def mehler_ps(functional, base: PointConfiguration, model: IntensityModel, s: float,
              n_inner: int = 64, rng=None, threads=None) -> MehlerEstimate:
    """Monte Carlo estimate of ``P_s F`` at ``base``; ``functional`` is any callable on configurations."""
    _check_s(s)
    if n_inner < 1:
        raise DomainError("n_inner must be positive")
    if s == 1.0:
        return MehlerEstimate(float(functional(base)), 0.0, 1.0, n_inner)
    vals = mehler_samples(functional, base, model, s, n_inner, rng if rng is not None else RngStream(0), threads)
    mean, se = _mean_se(vals)
    return MehlerEstimate(mean, se, float(s), int(n_inner), vals)


@dataclass(frozen=True)
class CommutationCheck:
    """Coupled estimates of ``D_x P_s F`` and ``s P_s D_x F`` and their difference."""

    dx_ps: float
    s_ps_dx: float
    difference: float
    std_error: float


def mehler_commutation(functional: FunctionalSpec, base: PointConfiguration, model: IntensityModel,
                       x, s: float, n_inner: int = 64, rng=None) -> CommutationCheck:
    """Test ``D_x P_s F = s P_s D_x F`` with coupled inner randomness.

    For each inner draw the base points use the same retention coins and the
    same replenishment whether or not x is present; x gets one extra coin.
    """
    _check_s(s)
    _check_inside(base, x)
    stream = rng if rng is not None else RngStream(0)
    a = np.empty(n_inner)
    b = np.empty(n_inner)
    for j in range(n_inner):
        gen = stream.child(j).generator()
        mu = _thin_replenish(base, model, s, gen)
        keep_x = gen.random() < s
        delta = diff1(functional, mu, x)
        a[j] = delta if keep_x else 0.0
        b[j] = s * delta
    d_mean, d_se = _mean_se(a - b)
    return CommutationCheck(_mean_se(a)[0], _mean_se(b)[0], d_mean, d_se)


# ---------------------------------------------------------------------------
# inverse Ornstein-Uhlenbeck operator


@dataclass(frozen=True)
class InverseOUEstimate:
    value: float
    std_error: float
    quadrature_nodes: tuple  # ((s, weight), ...)
    n_inner: int
    truncation_bias: float = 0.0
    diagnostics: tuple = ()  # ((s, node, inner_mean, se), ...)


def gauss_legendre(n: int, a: float, b: float):
    z, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * z + 0.5 * (b + a), 0.5 * (b - a) * w


def _quadrature(values, ses, weights):
    value = math.fsum((np.asarray(weights) * np.asarray(values)).tolist())
    se = math.sqrt(math.fsum((np.asarray(weights) ** 2 * np.asarray(ses) ** 2).tolist()))
    return value, se


def inverse_ou_minus_dx(functional: FunctionalSpec, base: PointConfiguration, model: IntensityModel, x,
                        nodes: int = 16, n_inner: int = 64, rng=None, threads=None) -> InverseOUEstimate:
    """``-D_x L^{-1} F = int_0^1 P_s D_x F ds`` by Gauss-Legendre in s."""
    _check_inside(base, x)
    stream = rng if rng is not None else RngStream(0)
    s_nodes, w = gauss_legendre(nodes, 0.0, 1.0)
    means, ses, diag = [], [], []
    deterministic = functional.point_value is not None
    for k, s in enumerate(s_nodes):
        if deterministic:
            est = MehlerEstimate(diff1(functional, base, x), 0.0, float(s), n_inner)
        else:
            est = mehler_ps(lambda mu: diff1(functional, mu, x), base, model, float(s), n_inner,
                            stream.child(k), threads)
        means.append(est.value)
        ses.append(est.std_error)
        diag.append((float(s), k, est.value, est.std_error))
    value, se = _quadrature(means, ses, w)
    return InverseOUEstimate(value, se, tuple(zip(s_nodes.tolist(), w.tolist())), n_inner, 0.0, tuple(diag))


def inverse_ou_value(functional: FunctionalSpec, base: PointConfiguration, model: IntensityModel,
                     mean: float | None = None, nodes: int = 32, n_inner: int = 64, rng=None,
                     u_max: float = 12.0, sd: float | None = None, threads=None) -> InverseOUEstimate:
    """``L^{-1} F = -int_0^inf P_{e^{-u}} (F - E F) du``, truncated at ``u_max``.

    ``mean`` (E F) is required; ``sd`` of F sets the tail bound
    ``e^{-u_max} sd`` and defaults to the pooled SD of the inner evaluations.
    """
    if mean is None:
        mean = functional.mean
    if mean is None:
        raise PreconditionError("inverse_ou_value needs E F (pass mean=...)")
    stream = rng if rng is not None else RngStream(0)
    u_nodes, w = gauss_legendre(nodes, 0.0, u_max)
    centred = lambda mu: functional(mu) - mean  # noqa: E731
    means, ses, diag, pooled = [], [], [], []
    for k, u in enumerate(u_nodes):
        s = math.exp(-u)
        est = mehler_ps(centred, base, model, s, n_inner, stream.child(k), threads)
        means.append(-est.value)
        ses.append(est.std_error)
        diag.append((s, k, est.value, est.std_error))
        if est.samples is not None:
            pooled.append(est.samples)
    value, se = _quadrature(means, ses, w)
    if sd is None:
        sd = functional.variance ** 0.5 if functional.variance is not None else (
            float(np.std(np.concatenate(pooled), ddof=1)) if pooled and sum(map(len, pooled)) > 1 else 0.0)
    nodes_sw = tuple((math.exp(-u), wk) for u, wk in zip(u_nodes.tolist(), w.tolist()))
    return InverseOUEstimate(value, se, nodes_sw, n_inner, math.exp(-u_max) * sd, tuple(diag))


def diagnostics_csv(est: InverseOUEstimate) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "node", "inner_mean", "se"])
    for s, k, m, se in est.diagnostics:
        w.writerow([repr(s), k, repr(m), repr(se)])
    return buf.getvalue()


__all__ = [
    "PreconditionError", "split_point", "diff1", "diff2", "MehlerEstimate", "mehler_samples", "mehler_ps",
    "CommutationCheck", "mehler_commutation", "InverseOUEstimate", "gauss_legendre",
    "inverse_ou_minus_dx", "inverse_ou_value", "diagnostics_csv",
]
