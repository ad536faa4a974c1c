"""Empirical variances and the Euclidean variance lower bound.

The lower bound is

    c^2 / (4 * 8^(k+1) * k!) * min_{j=1..k} 2^(-d(k-j)) (t kappa_d tau^d)^(j-1) t |A|

with ``kappa_d`` the volume of the unit ball; ``c`` comes from
:func:`estimate_separation_constant`, while ``tau`` and ``A`` are certified
by the caller.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .functionals.base import FunctionalSpec
from .malliavin import _insert, split_point
from .parallel import pmap
from .point_process import DomainError, IntensityModel, PointConfiguration, RngStream, sample_poisson


def evaluate_replicates(functional, model: IntensityModel, n: int, rng: RngStream, threads=None) -> np.ndarray:
    """``f(eta_i)`` for ``eta_i`` sampled from stream ``rng.child(i)``, i < n."""

    def one(i):
        return functional(sample_poisson(model, rng.child(i)))

    return np.asarray(pmap(one, range(n), threads), dtype=float)


@dataclass(frozen=True)
class VarianceEstimate:
    mean: float
    variance: float
    std_error_of_variance: float
    n_reps: int
    samples: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def std_error_of_mean(self) -> float:
        return math.sqrt(self.variance / self.n_reps)


def variance_from_samples(x) -> VarianceEstimate:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise DomainError("need at least 2 replicates")
    mean = math.fsum(x.tolist()) / n
    dev = x - mean
    var = math.fsum((dev * dev).tolist()) / (n - 1)
    m4 = math.fsum((dev**4).tolist()) / n
    # Var(s^2) ~ (mu4 - (n-3)/(n-1) sigma^4) / n
    se = math.sqrt(max(m4 - (n - 3) / (n - 1) * var * var, 0.0) / n)
    return VarianceEstimate(mean, var, se, n, x)


def empirical_variance(functional: FunctionalSpec, model: IntensityModel, n_reps: int,
                       rng: RngStream, threads=None) -> VarianceEstimate:
    if n_reps < 2:
        raise DomainError("n_reps must be at least 2")
    return variance_from_samples(evaluate_replicates(functional, model, n_reps, rng, threads))


# ---------------------------------------------------------------------------


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class LowerBoundInput:
    c: float
    k: int
    tau: float
    area_A: float
    t: float
    d: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1 or int(self.d) != self.d or self.d < 1:
            raise DomainError("k and d must be positive integers")
        if not (self.c > 0 and self.tau > 0 and self.area_A > 0 and self.t > 0):
            raise DomainError("c, tau, area_A and t must be positive")


def theorem53_terms(inp: LowerBoundInput) -> list[float]:
    """The k candidates of the minimum, j = 1..k."""
    pref = inp.c**2 / (4.0 * 8.0 ** (inp.k + 1) * math.factorial(inp.k))
    base = inp.t * unit_ball_volume(inp.d) * inp.tau**inp.d
    return [pref * 2.0 ** (-inp.d * (inp.k - j)) * base ** (j - 1) * inp.t * inp.area_A
            for j in range(1, inp.k + 1)]


def theorem53_lower_bound(inp: LowerBoundInput) -> float:
    return min(theorem53_terms(inp))


@dataclass(frozen=True)
class SeparationEstimate:
    value: float
    std_error: float
    n_reps: int

    @property
    def conservative(self) -> float:
        """``value - 3 SE``, floored at 0."""
        return max(self.value - 3.0 * self.std_error, 0.0)


def estimate_separation_constant(functional: FunctionalSpec, model: IntensityModel, insert_sets,
                                 n_reps: int, rng: RngStream, threads=None) -> SeparationEstimate:
    """``|E[f(eta + sum_{I1} delta) - f(eta + sum_{I2} delta)]|`` with one eta per replicate for both terms."""
    I1, I2 = (list(s) for s in insert_sets)
    if functional.point_value is not None:
        empty = PointConfiguration.empty(model.window, model.marks.marked)

        def total(pts):
            vals = []
            for x in pts:
                c, m = split_point(empty, x)
                vals.append(functional.point_value(c, m))
            return math.fsum(vals)

        return SeparationEstimate(abs(total(I1) - total(I2)), 0.0, n_reps)

    def one(i):
        eta = sample_poisson(model, rng.child(i))
        return functional(_insert(eta, *I1)) - functional(_insert(eta, *I2))

    d = np.asarray(pmap(one, range(n_reps), threads))
    mean = math.fsum(d.tolist()) / n_reps
    se = float(np.std(d, ddof=1) / math.sqrt(n_reps)) if n_reps > 1 else 0.0
    return SeparationEstimate(abs(mean), se, n_reps)


def variance_csv(rows) -> str:
    """``rows``: iterable of (functional, t, VarianceEstimate, lower_bound or None)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["functional", "t", "variance", "se", "lower_bound"])
    for name, t, est, lb in rows:
        w.writerow([name, repr(float(t)), repr(est.variance), repr(est.std_error_of_variance),
                    "" if lb is None else repr(float(lb))])
    return buf.getvalue()


__all__ = [
    "evaluate_replicates", "VarianceEstimate", "variance_from_samples", "empirical_variance",
    "unit_ball_volume", "LowerBoundInput", "theorem53_terms", "theorem53_lower_bound",
    "SeparationEstimate", "estimate_separation_constant", "variance_csv",
]
