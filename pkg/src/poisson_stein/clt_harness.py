"""Replicated standardized samples, distances to N(0, 1) and rate fits.

``empirical_dk`` is the two-sided sup over the sample points of the ECDF
minus Phi.  ``empirical_dw`` integrates |F_n - Phi| exactly: between order
statistics F_n is constant and ``int Phi = x Phi(x) + phi(x)``, so every
piece has a closed form, including the two Gaussian tails.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .functionals.base import DegenerateFunctional
from .point_process import DomainError, RngStream
from .variance_tools import evaluate_replicates, variance_from_samples

TAG_MEASURE = 0
TAG_PILOT = 1
DKW_ALPHA = 0.05


class InsufficientSignal(ValueError):
    pass


def t_key(t: float) -> int:
    """Stream index of an intensity value (its IEEE bit pattern)."""
    return struct.unpack("<q", struct.pack("<d", float(t)))[0]


@dataclass(frozen=True)
class ReplicationPlan:
    t_values: tuple
    n_reps: int = 1000
    seed: int = 0
    standardization: str = "auto"  # "analytic" | "pilot" | "auto" (analytic when available)
    n_pilot: int | None = None
    threads: int | None = None

    def __post_init__(self):
        ts = tuple(float(t) for t in self.t_values)
        object.__setattr__(self, "t_values", ts)
        if not ts or any(t <= 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise DomainError("t_values must be positive and strictly increasing")
        if self.n_reps < 100:
            raise DomainError("n_reps must be at least 100")
        if self.standardization not in ("analytic", "pilot", "auto"):
            raise DomainError("standardization must be analytic, pilot or auto")

    @property
    def pilot_size(self) -> int:
        return self.n_pilot if self.n_pilot is not None else max(1000, self.n_reps // 10)


@dataclass(frozen=True)
class Replicates:
    t: float
    sample: np.ndarray = field(repr=False)
    raw: np.ndarray = field(repr=False)
    mean: float
    variance: float
    standardization: str


def replicate(family, plan: ReplicationPlan) -> dict:
    """``family(t) -> (FunctionalSpec, IntensityModel)``; returns ``{t: Replicates}``.

    Measurement replicates use ``RngStream(seed).child(0, key(t)).child(i)``,
    the pilot batch ``child(1, key(t))``, so they never share draws.
    """
    root = RngStream(plan.seed)
    out = {}
    for t in plan.t_values:
        spec, model = family(t)
        raw = evaluate_replicates(spec, model, plan.n_reps, root.child(TAG_MEASURE, t_key(t)), plan.threads)
        use_analytic = plan.standardization == "analytic" or (
            plan.standardization == "auto" and spec.has_analytic_moments)
        if use_analytic:
            if not spec.has_analytic_moments:
                raise DomainError(f"{spec.name} has no analytic moments")
            mean, var, src = spec.mean, spec.variance, "analytic"
        else:
            pilot = evaluate_replicates(spec, model, plan.pilot_size, root.child(TAG_PILOT, t_key(t)), plan.threads)
            est = variance_from_samples(pilot)
            mean, var, src = est.mean, est.variance, "pilot"
        if not var > 0:
            raise DegenerateFunctional(f"{spec.name} at t={t}: variance {var} is not positive")
        out[t] = Replicates(t, (raw - mean) / math.sqrt(var), raw, float(mean), float(var), src)
    return out


# ---------------------------------------------------------------------------
# distances


def _sorted_sample(sample) -> np.ndarray:
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0:
        raise DomainError("empty sample")
    if not np.all(np.isfinite(x)):
        raise DomainError("sample contains non-finite values")
    return x


def empirical_dk(sample) -> float:
    x = _sorted_sample(sample)
    n = x.size
    phi = ndtr(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(np.abs(i / n - phi)), np.max(np.abs((i - 1) / n - phi))))


def _int_phi(a, b):
    """int_a^b Phi, with ``x Phi(x) + phi(x)`` as antiderivative."""
    def G(x):
        return x * ndtr(x) + np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    return G(b) - G(a)


def empirical_dw(sample) -> float:
    """``int |F_n - Phi|`` over the real line (exact up to rounding)."""
    x = _sorted_sample(sample)
    n = x.size
    dens = 1.0 / math.sqrt(2 * math.pi)
    # tails: int_{-inf}^{x1} Phi = G(x1);  int_{xn}^{inf} (1 - Phi) = phi(xn) - xn (1 - Phi(xn))
    left = x[0] * ndtr(x[0]) + dens * math.exp(-0.5 * x[0] ** 2)
    right = dens * math.exp(-0.5 * x[-1] ** 2) - x[-1] * ndtr(-x[-1])
    terms = [left, right]
    a, b = x[:-1], x[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    level = (np.arange(1, n)[keep]) / n
    # |level - Phi| changes sign at most once on [a, b], at the normal quantile of level
    c = np.clip(ndtri(level), a, b)
    ip_ac = _int_phi(a, c)
    ip_cb = _int_phi(c, b)
    # Phi < level on [a, c), Phi >= level on [c, b]
    piece = (level * (c - a) - ip_ac) + (ip_cb - level * (b - c))
    terms.extend(np.abs(piece).tolist())  # each part is nonnegative; abs guards rounding
    return float(math.fsum(terms))


def dkw_band(n: int, alpha: float = DKW_ALPHA) -> float:
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


@dataclass(frozen=True)
class DistanceReport:
    t: float
    d_K: float
    d_W: float
    dkw_band: float
    n: int
    variance: float = float("nan")

    def __post_init__(self):
        if not (0.0 <= self.d_K <= 1.0) or self.d_W < 0:
            raise ValueError("distance out of range")


def distance_report(t: float, sample, variance: float = float("nan")) -> DistanceReport:
    x = np.asarray(sample, dtype=float)
    return DistanceReport(float(t), empirical_dk(x), empirical_dw(x), dkw_band(x.size), int(x.size), variance)


def distances(reps: dict) -> list[DistanceReport]:
    return [distance_report(t, r.sample, r.variance) for t, r in sorted(reps.items())]


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    residuals: tuple
    t_used: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(reports, metric: str = "d_K") -> RateFit:
    """Least squares of log(distance) on log(t), using only distances above the DKW band."""
    reports = list(reports)
    pts = [(r.t, getattr(r, metric)) for r in reports if getattr(r, metric) > r.dkw_band]
    if len(pts) < 4:
        raise InsufficientSignal(f"only {len(pts)} of {len(reports)} distances exceed the DKW band")
    lt = np.log([p[0] for p in pts])
    ld = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(lt, ld, 1)
    fitted = slope * lt + intercept
    resid = ld - fitted
    ss_tot = float(np.sum((ld - ld.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, tuple(resid.tolist()), tuple(p[0] for p in pts))


CSV_COLUMNS = ("functional", "t", "n", "d_K", "d_W", "dkw_band", "dw_bound", "dk_bound", "variance", "seed")


def reports_csv(functional: str, reports, seed: int, bounds: dict | None = None, header: str = "") -> str:
    """RFC-4180 CSV; ``bounds`` maps t to (dw_bound, dk_bound)."""
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        b = (bounds or {}).get(r.t)
        w.writerow([functional, repr(r.t), r.n, repr(r.d_K), repr(r.d_W), repr(r.dkw_band),
                    "" if b is None else repr(b[0]), "" if b is None else repr(b[1]), repr(r.variance), seed])
    return buf.getvalue()


__all__ = [
    "InsufficientSignal", "ReplicationPlan", "Replicates", "replicate", "empirical_dk", "empirical_dw",
    "dkw_band", "DistanceReport", "distance_report", "distances", "RateFit", "fit_rate", "reports_csv",
    "CSV_COLUMNS", "t_key",
]
