"""Monte Carlo estimates of the gamma terms and the bounds built from them.

For a standardized F (mean 0, variance 1)::

    gamma1 = 4 [ int sqrt(E (D_x1 F)^2 (D_x2 F)^2) sqrt(E (D2_x1x3 F)^2 (D2_x2x3 F)^2) dlambda^3 ]^(1/2)
    gamma2 = [ int E (D2_x1x3 F)^2 (D2_x2x3 F)^2 dlambda^3 ]^(1/2)
    gamma3 = int E |D_x F|^3 dlambda
    gamma4 = 1/2 (E F^4)^(1/4) int (E (D_x F)^4)^(3/4) dlambda
    gamma5 = [ int E (D_x F)^4 dlambda ]^(1/2)
    gamma6 = [ int 6 sqrt(E (D_x1 F)^4) sqrt(E (D2_x1x2 F)^4) + 3 E (D2_x1x2 F)^4 dlambda^2 ]^(1/2)

d_W <= gamma1 + gamma2 + gamma3 and d_K <= gamma1 + ... + gamma6.

Outer points are uniform draws from the normalized intensity, so each
lambda-integral is ``lambda(X)^k`` times an average.  Every outer triple owns
an independent stream from which its ``n_eta`` configurations are drawn, and
all difference operators at that triple are evaluated on the same
configurations.  Square roots of cross moments use independent halves of the
inner sample; standard errors come from an outer bootstrap.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .functionals.base import DegenerateFunctional, FunctionalSpec
from .parallel import pmap
from .point_process import IntensityModel, PointConfiguration, RngStream, sample_poisson
from .variance_tools import empirical_variance

TAG_PILOT = 1
TAG_OUTER = 2
TAG_BOOT = 3
TAG_PROBE = 4
TAG_PAIR = 5

ZERO_TOL = 1e-12


class NumericalFailure(ArithmeticError):
    pass


@dataclass(frozen=True)
class MCPlan:
    n_outer: int = 1000
    n_eta: int = 1000
    rng: RngStream = field(default_factory=lambda: RngStream(0))
    n_pilot: int = 1000
    n_boot: int = 200
    threads: int | None = None
    use_point_value: bool = True  # False: D_x F always as f(eta + x) - f(eta)
    proposal: str = "uniform"  # or "local": x2, x3 drawn near x1 (defensive mixture)
    local_scale: float = 1.0  # Gaussian sd in units of the mean spacing t^(-1/d)
    local_mix: float = 0.2  # uniform share of the local proposal

    def __post_init__(self):
        if self.proposal not in ("uniform", "local"):
            raise ValueError("proposal must be 'uniform' or 'local'")


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class Standardization:
    mean: float
    variance: float
    source: str  # "analytic" | "pilot" | "given"


def standardization_for(functional: FunctionalSpec, model: IntensityModel, plan: MCPlan) -> Standardization:
    if functional.has_analytic_moments:
        return Standardization(functional.mean, functional.variance, "analytic")
    est = empirical_variance(functional, model, plan.n_pilot, plan.rng.child(TAG_PILOT), plan.threads)
    return Standardization(est.mean, est.variance, "pilot")


def standardize(functional: FunctionalSpec, model: IntensityModel, plan: MCPlan):
    st = standardization_for(functional, model, plan)
    if not st.variance > 0:
        raise DegenerateFunctional(f"{functional.name}: variance estimate {st.variance} is not positive")
    return functional.standardized(st.mean, st.variance), st


# ---------------------------------------------------------------------------
# inner sampling


def _outer_points(model: IntensityModel, gen, k: int):
    coords, marks = model.sample_points(gen, k)
    if marks is None:
        return [(coords[i:i + 1], None) for i in range(k)]
    return [(coords[i:i + 1], marks[i:i + 1]) for i in range(k)]


def _plus(eta: PointConfiguration, *pts) -> PointConfiguration:
    coords = np.concatenate([eta.coords] + [c for c, _ in pts])
    if eta.marks is None:
        return PointConfiguration(coords, eta.window)
    return PointConfiguration(coords, eta.window, np.concatenate([eta.marks] + [m for _, m in pts]))


def _halves(v: np.ndarray):
    n = v.shape[0]
    if n < 2:
        return float(v.mean()), float(v.mean())
    h = n // 2
    return float(v[:h].mean()), float(v[h:].mean())


def _sqrt0(a: float) -> float:
    return math.sqrt(a) if a > 0 else 0.0


# per-outer statistics, in this column order
_COLS = ("g1", "g2", "g3", "g4", "g5", "g6", "sqrt_d4")


def _local_point(model: IntensityModel, gen, anchor: np.ndarray, plan: MCPlan):
    """Draw from ``eps * uniform + (1 - eps) * N(anchor, sigma^2 I)``; return (point, lambda-density / q)."""
    win = model.window
    d = win.dim
    sigma = plan.local_scale * model.t ** (-1.0 / d)
    if gen.random() < plan.local_mix:
        y = win.uniform(gen, 1)
    else:
        y = anchor + sigma * gen.standard_normal((1, d))
    marks = model.marks.sample(gen, 1)
    if not win.contains(y)[0]:
        return (y, marks), 0.0
    r2 = float(np.sum((y - anchor) ** 2))
    q = plan.local_mix / win.volume + (1.0 - plan.local_mix) * math.exp(-0.5 * r2 / sigma**2) / (
        2.0 * math.pi * sigma**2) ** (d / 2)
    return (y, marks), model.total_mass / win.volume / q


def _outer_stats(functional: FunctionalSpec, model: IntensityModel, stream: RngStream,
                 plan: MCPlan, second: bool) -> np.ndarray:
    """Per-outer integrands; x2 and x3 enter already multiplied by their weights."""
    n_eta = plan.n_eta
    gen = stream.generator()
    lam = model.total_mass
    if plan.proposal == "uniform":
        x1, x2, x3 = _outer_points(model, gen, 3)
        w2 = w3 = lam
    else:
        x1 = _outer_points(model, gen, 1)[0]
        x2, w2 = _local_point(model, gen, x1[0], plan)
        x3, w3 = _local_point(model, gen, x1[0], plan)
    pv = functional.point_value if plan.use_point_value else None
    chaos1 = functional.first_chaos
    use2 = w2 > 0
    need_d2 = second and not chaos1
    if pv is not None:
        # D_x F = f(x) does not depend on eta
        d1 = np.full(n_eta, float(pv(*x1)))
        d2 = np.full(n_eta, float(pv(*x2)) if use2 else 0.0)
    else:
        d1 = np.empty(n_eta)
        d2 = np.zeros(n_eta)
    q13 = np.zeros(n_eta)
    q23 = np.zeros(n_eta)
    q12 = np.zeros(n_eta)
    if pv is None or need_d2:
        f = functional
        for j in range(n_eta):
            eta = sample_poisson(model, gen)
            f0 = f(eta)
            f1 = f(_plus(eta, x1))
            d1[j] = f1 - f0
            if use2:
                f2 = f(_plus(eta, x2))
                d2[j] = f2 - f0
            if need_d2:
                if use2:
                    q12[j] = (f(_plus(eta, x1, x2)) - f2) - (f1 - f0)
                if w3 > 0:
                    f3 = f(_plus(eta, x3))
                    q13[j] = (f(_plus(eta, x1, x3)) - f3) - (f1 - f0)
                    if use2:
                        q23[j] = (f(_plus(eta, x2, x3)) - f3) - (f2 - f0)
    dd = d1 * d1 * d2 * d2
    qq = q13 * q13 * q23 * q23
    d4 = d1**4
    q4 = q12**4
    a1, a2 = _halves(dd)
    b1, b2 = _halves(qq)
    c1, c2 = _halves(d4)
    e1, e2 = _halves(q4)
    m_d4 = float(d4.mean())
    g1 = 0.5 * (_sqrt0(a1) * _sqrt0(b2) + _sqrt0(a2) * _sqrt0(b1))
    g6 = 3.0 * (_sqrt0(c1) * _sqrt0(e2) + _sqrt0(c2) * _sqrt0(e1)) + 3.0 * float(q4.mean())
    return np.array([g1 * w2 * w3, float(qq.mean()) * w2 * w3, float(np.mean(np.abs(d1) ** 3)), m_d4**0.75,
                     m_d4, g6 * w2, _sqrt0(m_d4)])


def _collect(functional, model, plan: MCPlan, second: bool) -> np.ndarray:
    base = plan.rng.child(TAG_OUTER)
    rows = pmap(lambda i: _outer_stats(functional, model, base.child(i), plan, second),
                range(plan.n_outer), plan.threads)
    return np.vstack(rows)


def _fourth_moment_from_means(lam: float, means: np.ndarray) -> float:
    return max(256.0 * (lam * means[6]) ** 2, 4.0 * lam * means[4] + 2.0)


def _gammas(lam: float, means: np.ndarray, ef4: float | None):
    b44 = _fourth_moment_from_means(lam, means)
    ef4_used = b44 if ef4 is None else ef4
    g = (
        4.0 * _sqrt0(lam * means[0]),
        _sqrt0(lam * means[1]),
        lam * means[2],
        0.5 * ef4_used**0.25 * lam * means[3],
        _sqrt0(lam * means[4]),
        _sqrt0(lam * means[5]),
    )
    return g, b44


def _fsum_mean(a: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(a[:, j].tolist()) / a.shape[0] for j in range(a.shape[1])])


# ---------------------------------------------------------------------------
# public estimators


@dataclass(frozen=True)
class GammaEstimates:
    gamma: tuple
    std_error: tuple
    n_outer: int
    n_eta: int
    variance_used: float
    mean_used: float = 0.0
    standardization: str = "analytic"
    fourth_moment: float = float("nan")
    fourth_moment_source: str = "analytic"  # or "bound"
    fourth_moment_bound: float = float("nan")
    fourth_moment_bound_se: float = 0.0
    lambda_mass: float = float("nan")

    def __post_init__(self):
        if any(g < 0 for g in self.gamma):
            raise ValueError("gamma estimates must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_gammas(functional: FunctionalSpec, model: IntensityModel, plan: MCPlan | None = None,
                    standardize_first: bool = True) -> GammaEstimates:
    """Estimate gamma_1..gamma_6 for ``(F - E F) / sqrt(V F)``.

    Analytic mean/variance are used when the functional carries them,
    otherwise a pilot batch on an independent stream.  With
    ``standardize_first=False`` the functional is taken as already
    standardized.
    """
    plan = plan or MCPlan()
    if standardize_first:
        fs, st = standardize(functional, model, plan)
    else:
        fs, st = functional, Standardization(0.0, 1.0, "given")
    lam = model.total_mass
    stats = _collect(fs, model, plan, second=True)
    ef4 = None
    source = "bound"
    if fs.central_moment4 is not None and fs.mean == 0.0:
        ef4 = fs.central_moment4
        source = "analytic"
    g, b44 = _gammas(lam, _fsum_mean(stats), ef4)
    boot_g, boot_b = [], []
    gen = plan.rng.child(TAG_BOOT).generator()
    for _ in range(plan.n_boot):
        idx = gen.integers(0, plan.n_outer, plan.n_outer)
        gb, bb = _gammas(lam, stats[idx].mean(axis=0), ef4)
        boot_g.append(gb)
        boot_b.append(bb)
    se = tuple(float(s) for s in np.std(np.asarray(boot_g), axis=0, ddof=1)) if plan.n_boot > 1 else (0.0,) * 6
    b_se = float(np.std(boot_b, ddof=1)) if plan.n_boot > 1 else 0.0
    if not all(math.isfinite(x) for x in g):
        raise NumericalFailure(f"nonfinite gamma estimate {g}")
    return GammaEstimates(
        tuple(float(x) for x in g), se, plan.n_outer, plan.n_eta, st.variance, st.mean, st.source,
        float(ef4 if ef4 is not None else b44), source, float(b44), b_se, float(lam),
    )


def fourth_moment_bound(functional: FunctionalSpec, model: IntensityModel, plan: MCPlan | None = None,
                        standardize_first: bool = False) -> float:
    """``max{256 [int (E D_z^4)^(1/2) dlambda]^2, 4 int E D_z^4 dlambda + 2}`` for a standardized F."""
    plan = plan or MCPlan()
    fs = standardize(functional, model, plan)[0] if standardize_first else functional
    stats = _collect(fs, model, plan, second=False)
    return _fourth_moment_from_means(model.total_mass, _fsum_mean(stats))


@dataclass(frozen=True)
class BoundReport:
    dw_bound: float
    dk_bound: float
    dw_se: float
    dk_se: float
    fourth_moment_bound: float
    components: GammaEstimates
    empirical_dw: float | None = None
    empirical_dk: float | None = None
    empirical_dw_se: float = 0.0
    empirical_dk_se: float = 0.0

    def __post_init__(self):
        if self.dw_bound > self.dk_bound:
            raise ValueError("d_W bound exceeds d_K bound")

    def with_empirical(self, dw: float, dk: float, dw_se: float = 0.0, dk_se: float = 0.0) -> "BoundReport":
        return BoundReport(self.dw_bound, self.dk_bound, self.dw_se, self.dk_se, self.fourth_moment_bound,
                           self.components, dw, dk, dw_se, dk_se)

    def dominates(self, n_se: float = 3.0) -> dict:
        """Check empirical <= bound + n_se * (combined SE) for each available distance."""
        out = {}
        if self.empirical_dw is not None:
            slack = n_se * math.hypot(self.dw_se, self.empirical_dw_se)
            out["d_W"] = self.empirical_dw <= self.dw_bound + slack
        if self.empirical_dk is not None:
            slack = n_se * math.hypot(self.dk_se, self.empirical_dk_se)
            out["d_K"] = self.empirical_dk <= self.dk_bound + slack
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["components"] = self.components.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_row(self, functional: str, t: float, seed: int) -> dict:
        g = self.components
        row = {"functional": functional, "t": t, "seed": seed, "dw_bound": self.dw_bound,
               "dk_bound": self.dk_bound, "dw_se": self.dw_se, "dk_se": self.dk_se,
               "fourth_moment_bound": self.fourth_moment_bound,
               "empirical_dw": self.empirical_dw, "empirical_dk": self.empirical_dk,
               "variance_used": g.variance_used}
        for i in range(6):
            row[f"gamma{i + 1}"] = g.gamma[i]
            row[f"gamma{i + 1}_se"] = g.std_error[i]
        return row


def assemble_bounds(g: GammaEstimates) -> BoundReport:
    dw = math.fsum(g.gamma[:3])
    dk = math.fsum(g.gamma)
    dw_se = math.sqrt(math.fsum(s * s for s in g.std_error[:3]))
    dk_se = math.sqrt(math.fsum(s * s for s in g.std_error))
    return BoundReport(dw, dk, dw_se, dk_se, g.fourth_moment_bound, g)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# stabilization bound


@dataclass(frozen=True)
class StabilizationPlan:
    n_outer: int = 64  # x1 draws
    n_pair: int = 16  # x2 draws per x1
    n_eta: int = 32
    lattice_per_axis: int = 32
    n_random_probes: int = 64
    n_probe_eta: int | None = None
    rng: RngStream = field(default_factory=lambda: RngStream(0))
    n_pilot: int = 1000
    threads: int | None = None


@dataclass(frozen=True)
class StabilizationReport:
    c1: float
    c2: float
    p1: float
    p2: float
    m_hat: float
    prob_integrals: dict
    Gamma_F: float
    variance: float
    dw_bound: float
    dk_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def _nonzero(d, scale):
    return abs(d) > ZERO_TOL * scale


def _probe_points(model: IntensityModel, plan: StabilizationPlan):
    win = model.window
    m = plan.lattice_per_axis
    gen = plan.rng.child(TAG_PROBE).generator()
    pts = []
    if m > 0:
        axes = [win.lo[a] + (np.arange(m) + 0.5) * win.sides[a] / m for a in range(win.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        lat = np.stack([g.ravel() for g in mesh], axis=1)
        # partner: the next lattice node along the first axis (wrapping back at the edge)
        step = np.zeros(win.dim)
        step[0] = win.sides[0] / m
        partner = np.where((lat[:, :1] + step[0]) <= win.hi[0], lat + step, lat - step)
        pts += [(lat[i], partner[i]) for i in range(lat.shape[0])]
    if plan.n_random_probes > 0:
        a = win.uniform(gen, plan.n_random_probes)
        b = win.uniform(gen, plan.n_random_probes)
        pts += [(a[i], b[i]) for i in range(plan.n_random_probes)]
    marks = model.marks.sample(gen, 2 * len(pts))

    def wrap(c, k):
        return (c.reshape(1, -1), None if marks is None else marks[k:k + 1])

    return [(wrap(x, 2 * i), wrap(y, 2 * i + 1)) for i, (x, y) in enumerate(pts)]


def estimate_stabilization_bound(functional: FunctionalSpec, model: IntensityModel, p1: float = 1.0,
                                 p2: float = 1.0, plan: StabilizationPlan | None = None,
                                 variance: float | None = None) -> StabilizationReport:
    """Evaluate both displayed stabilization bounds with MC plug-ins.

    Works on the unstandardized F together with its variance.  ``c1``/``c2``
    are maxima of moment estimates over a probe lattice plus random probes and
    the sampled pairs, so they under-estimate the suprema.
    """
    plan = plan or StabilizationPlan()
    if not (p1 > 0 and p2 > 0):
        raise ValueError("p1 and p2 must be positive")
    f = functional
    if variance is None:
        variance = standardization_for(f, model, MCPlan(rng=plan.rng, n_pilot=plan.n_pilot,
                                                         threads=plan.threads)).variance
    if not variance > 0:
        raise DegenerateFunctional(f"{f.name}: variance {variance} is not positive")
    lam = model.total_mass
    chaos1 = f.first_chaos
    pv = f.point_value

    def first(eta, x1):
        """``(D_x1 F, scale, (f0, f1) or None)``."""
        if pv is not None:
            return float(pv(*x1)), 1.0, None
        f0, f1 = f(eta), f(_plus(eta, x1))
        return f1 - f0, max(abs(f0), abs(f1)), (f0, f1)

    def second(eta, x1, x2, cache):
        if chaos1:
            return 0.0, 1.0
        f0, f1 = cache
        f2, f12 = f(_plus(eta, x2)), f(_plus(eta, x1, x2))
        return (f12 - f2) - (f1 - f0), max(abs(f0), abs(f1), abs(f2), abs(f12))

    # probes for c1, c2
    n_pe = plan.n_probe_eta or plan.n_eta
    probes = _probe_points(model, plan)
    pbase = plan.rng.child(TAG_PROBE, 1)

    def probe(k):
        x, y = probes[k]
        gen = pbase.child(k).generator()
        m1 = m2 = 0.0
        for _ in range(n_pe):
            eta = sample_poisson(model, gen)
            d, _, cache = first(eta, x)
            q, _ = second(eta, x, y, cache)
            m1 += abs(d) ** (4 + p1)
            m2 += abs(q) ** (4 + p2)
        return m1 / n_pe, m2 / n_pe

    pr = pmap(probe, range(len(probes)), plan.threads)
    c1 = max([a for a, _ in pr], default=0.0)
    c2 = max([b for _, b in pr], default=0.0)

    # pair sample for the probability integrals
    qbase = plan.rng.child(TAG_PAIR)

    def outer(i):
        gen = qbase.child(i).generator()
        x1 = _outer_points(model, gen, 1)[0]
        x2s = _outer_points(model, gen, plan.n_pair)
        nz1 = 0
        nz2 = np.zeros(plan.n_pair)
        mom1 = 0.0
        mom2 = np.zeros(plan.n_pair)
        for _ in range(plan.n_eta):
            eta = sample_poisson(model, gen)
            d, sc, cache = first(eta, x1)
            nz1 += _nonzero(d, sc)
            mom1 += abs(d) ** (4 + p1)
            for m, x2 in enumerate(x2s):
                q, sq = second(eta, x1, x2, cache)
                nz2[m] += _nonzero(q, sq)
                mom2[m] += abs(q) ** (4 + p2)
        return nz1 / plan.n_eta, nz2 / plan.n_eta, mom1 / plan.n_eta, mom2 / plan.n_eta

    res = pmap(outer, range(plan.n_outer), plan.threads)
    P1 = np.array([r[0] for r in res])
    P2 = np.vstack([r[1] for r in res])
    c1 = max(c1, max(r[2] for r in res))
    c2 = max(c2, max(float(r[3].max()) for r in res))
    if not (math.isfinite(c1) and math.isfinite(c2)):
        raise NumericalFailure("nonfinite moment estimate in stabilization bound")

    a_in = p2 / (16 + 4 * p2)
    inner = lam * np.mean(P2**a_in, axis=1)
    I_A = math.sqrt(lam * float(np.mean(inner**2)))
    W = lam * float(np.mean(P1 ** ((1 + p1) / (4 + p1))))
    Gam = lam * float(np.mean(P1 ** (p1 / (8 + 2 * p1))))
    J = lam * lam * float(np.mean(P2 ** (p2 / (8 + 2 * p2))))
    m_hat = float(inner.max())
    cb = max(1.0, c1, c2)
    V = variance
    dw = 5 * cb / V * I_A + cb / V**1.5 * W
    dk = (5 * cb / V * I_A + cb * Gam**0.5 / V + 2 * cb * Gam / V**1.5
          + (cb * Gam**1.25 + 2 * cb * Gam**1.5) / V**2 + (math.sqrt(6) + math.sqrt(3)) * cb / V * math.sqrt(J))
    return StabilizationReport(float(c1), float(c2), p1, p2, m_hat,
                               {"I_A": I_A, "first_order": W, "second_order": J}, Gam, V, dw, dk)


__all__ = [
    "MCPlan", "Standardization", "standardization_for", "standardize", "GammaEstimates", "estimate_gammas",
    "fourth_moment_bound", "BoundReport", "assemble_bounds", "rows_to_csv", "StabilizationPlan",
    "StabilizationReport", "estimate_stabilization_bound", "NumericalFailure",
]
