"""End-to-end acceptance criteria 1-8.

Each test records one ``ACCEPTANCE criterion N: PASS|FAIL ...`` line (printed
and repeated in the terminal summary).  Seeds are fixed up front and were not
chosen by looking at outcomes.
"""

import hashlib
import json
import math
import time
import warnings

import numpy as np
import pytest

from inequalities import contractivity, dl_inverse_moments, fourth_moment, poincare
from oracles import knn_edge_power_bruteforce, voronoi_edge_length_halfplane
from poisson_stein import cli
from poisson_stein.clt_harness import (
    InsufficientSignal,
    ReplicationPlan,
    distance_report,
    empirical_dw,
    fit_rate,
    replicate,
)
from poisson_stein.functionals import build, first_chaos, knn_edge_power_value, rescaled_poisson, voronoi_edge_length
from poisson_stein.malliavin import diff1, diff2, inverse_ou_minus_dx, mehler_commutation, mehler_ps
from poisson_stein.parallel import default_threads, set_default_threads
from poisson_stein.point_process import IntensityModel, PointConfiguration, RngStream, Window, add_points, sample_poisson
from poisson_stein.stein_bounds import MCPlan, assemble_bounds, estimate_gammas, standardize
from poisson_stein.variance_tools import LowerBoundInput, theorem53_lower_bound, variance_from_samples

UNIT = Window.cube(1.0, 2)
RATE_T = (32.0, 64.0, 128.0, 256.0, 512.0)
RATE_N = 2000
SLOPE_RANGE = (-0.75, -0.25)


def _max_exceedances(n: int) -> int:
    # per-item checks at 3 SE fail with probability ~0.0027 each; allow what a binomial makes plausible
    return 2 if n <= 60 else 3


# --- 1 -----------------------------------------------------------------------


def test_criterion_1_analytic_baseline(acceptance):
    details, ok = [], True
    reps = replicate(rescaled_poisson, ReplicationPlan((25.0, 100.0, 400.0), n_reps=RATE_N, seed=101))
    for i, t in enumerate((25.0, 100.0, 400.0)):
        spec, model = rescaled_poisson(t)
        t0 = time.perf_counter()
        g = estimate_gammas(spec, model, MCPlan(n_outer=1000, n_eta=1000, rng=RngStream(100, i),
                                                n_boot=200, use_point_value=False))
        elapsed = time.perf_counter() - t0
        target = t**-0.5
        rel = abs(g.gamma[2] - target) / target
        zeros = g.gamma[0] == g.gamma[1] == g.gamma[5] == 0.0
        dw = empirical_dw(reps[t].sample)
        dw_ok = dw <= target + 3.0 / math.sqrt(RATE_N)
        ok &= rel <= 0.05 and zeros and dw_ok and elapsed <= 120.0
        details.append(f"t={t:g}: gamma3 rel.err {rel:.2e}, g1/g2/g6 zero={zeros}, d_W {dw:.4f} "
                       f"(limit {target + 3 / math.sqrt(RATE_N):.4f}), {elapsed:.0f}s")
    acceptance(1, ok, "; ".join(details))
    assert ok


# --- 2 -----------------------------------------------------------------------


def test_criterion_2_mehler_identities(acceptance):
    spec, model = rescaled_poisson(50.0)
    lines, ok = [], True
    for s in (0.25, 0.5, 0.75):
        z, bad = [], 0
        for i in range(50):
            base = sample_poisson(model, RngStream(200, i))
            est = mehler_ps(spec, base, model, s, 64, RngStream(201).child(i, int(s * 100)))
            diff = est.value - s * spec(base)
            bad += abs(diff) > 3 * est.std_error
            z.append(diff / est.std_error)
        z_mean = float(np.mean(z) * math.sqrt(len(z)))
        good = bad <= _max_exceedances(50) and abs(z_mean) <= 3
        ok &= good
        lines.append(f"P_s s={s}: {bad}/50 beyond 3SE, pooled z {z_mean:+.2f}")

    knn, kmodel = build("knn", {"alpha": 0.0}, 50.0)
    knn = standardize(knn, kmodel, MCPlan(rng=RngStream(202)))[0]
    gen = np.random.default_rng(203)
    bad, z = 0, []
    for i in range(50):
        base = sample_poisson(kmodel, RngStream(204, i))
        chk = mehler_commutation(knn, base, kmodel, gen.random(2), 0.5, 64, RngStream(205, i))
        bad += abs(chk.difference) > 3 * chk.std_error + 1e-15
        if chk.std_error > 0:
            z.append(chk.difference / chk.std_error)
    z_mean = float(np.mean(z) * math.sqrt(len(z)))
    good = bad <= _max_exceedances(50) and abs(z_mean) <= 3
    ok &= good
    lines.append(f"commutation (knn): {bad}/50 beyond 3SE, pooled z {z_mean:+.2f}")

    # generic path: the exact summand is hidden so the quadrature over P_s is exercised
    t = 30.0
    fc = first_chaos(lambda x: x[:, 0], t / 2)
    fc = type(fc)(fc.name, fc.eval, first_chaos=True)
    fmodel = IntensityModel(UNIT, t)
    bad, z = 0, []
    for i in range(20):
        gen = RngStream(206, i).generator()
        base = sample_poisson(fmodel, gen)
        x = gen.random(2)
        est = inverse_ou_minus_dx(fc, base, fmodel, x, nodes=8, n_inner=16, rng=RngStream(207, i))
        bad += abs(est.value - x[0]) > 3 * est.std_error + 1e-12
        z.append((est.value - x[0]) / est.std_error)
    z_mean = float(np.mean(z) * math.sqrt(len(z)))
    good = bad <= _max_exceedances(20) and abs(z_mean) <= 3
    ok &= good
    lines.append(f"-D L^-1 = f(x): {bad}/20 beyond 3SE, pooled z {z_mean:+.2f}")
    acceptance(2, ok, "; ".join(lines))
    assert ok


# --- 3 -----------------------------------------------------------------------

SUITE_FAMILIES = ("first_chaos", "knn", "voronoi2d", "shot_noise")


def test_criterion_3_inequality_suites(acceptance):
    checks = []
    gen = np.random.default_rng(300)
    for fi, name in enumerate(SUITE_FAMILIES):
        for ti, t in enumerate((50.0, 100.0)):
            root = RngStream(301).child(fi, ti)
            spec, model = build(name, {}, t)
            spec = standardize(spec, model, MCPlan(n_pilot=1000, rng=root.child(0)))[0]
            s = float(gen.uniform(0.1, 0.9))
            group = [poincare(spec, model, 400, root.child(1))]
            group += contractivity(spec, model, (1, 2, 4), s, 80, 16, root.child(2))
            group += dl_inverse_moments(spec, model, (2, 3, 4), 30, 8, 8, root.child(3))
            group.append(fourth_moment(spec, model, 1000, MCPlan(n_outer=100, n_eta=10, rng=root.child(4)),
                                       root.child(5)))
            checks += [(f"{name} t={t:g}", c) for c in group]
    failed = [f"{label} {c}" for label, c in checks if not c.ok]
    ok = len(checks) >= 40 and (len(checks) - len(failed)) >= 0.95 * len(checks)
    for label, c in checks:
        print(f"  {label}: {c}")
    acceptance(3, ok, f"{len(checks) - len(failed)}/{len(checks)} sub-tests hold"
               + (f"; violated: {failed}" if failed else ""))
    assert ok


# --- 4 -----------------------------------------------------------------------

BOUND_CASES = (
    ("knn a=0", "knn", {"alpha": 0.0}, "uniform"),
    ("knn a=1", "knn", {"alpha": 1.0}, "uniform"),
    ("voronoi edge length", "voronoi2d", {"statistic": "edge_length"}, "local"),
    ("shot noise r+sin r", "shot_noise", {"phi": "r_plus_sin", "kernel": "ou"}, "uniform"),
)


def test_criterion_4_bound_domination(acceptance):
    lines, ok = [], True
    for ci, (label, name, params, proposal) in enumerate(BOUND_CASES):
        family = lambda t, n=name, p=params: build(n, p, t)  # noqa: E731
        reps = replicate(family, ReplicationPlan((50.0, 100.0), n_reps=1000, seed=400 + ci))
        for ti, t in enumerate((50.0, 100.0)):
            spec, model = family(t)
            g = estimate_gammas(spec, model, MCPlan(n_outer=100, n_eta=20, n_boot=100, proposal=proposal,
                                                    rng=RngStream(410).child(ci, ti)))
            rep = distance_report(t, reps[t].sample)
            se = 1.0 / math.sqrt(rep.n)
            b = assemble_bounds(g).with_empirical(rep.d_W, rep.d_K, se, se)
            dom = b.dominates()
            ok &= all(dom.values())
            lines.append(f"{label} t={t:g}: d_W {rep.d_W:.3f} <= {b.dw_bound:.3g}, "
                         f"d_K {rep.d_K:.3f} <= {b.dk_bound:.3g} -> {all(dom.values())}")
    acceptance(4, ok, "; ".join(lines))
    assert ok


# --- 5 and 6 -------------------------------------------------------------------

RATE_FAMILIES = (
    ("knn a=0", "knn", {"alpha": 0.0}),
    ("knn a=1", "knn", {"alpha": 1.0}),
    ("voronoi edge length", "voronoi2d", {"statistic": "edge_length"}),
    ("shot noise", "shot_noise", {}),
)


@pytest.fixture(scope="module")
def rate_runs():
    out = {}
    t0 = time.perf_counter()
    for fi, (label, name, params) in enumerate(RATE_FAMILIES):
        family = lambda t, n=name, p=params: build(n, p, t)  # noqa: E731
        out[label] = replicate(family, ReplicationPlan(RATE_T, n_reps=RATE_N, seed=500 + fi))
    return out, time.perf_counter() - t0


def test_criterion_5_rate(acceptance, rate_runs):
    runs, elapsed = rate_runs
    lines, ok = [], elapsed <= 1800
    for label, reps in runs.items():
        reports = [distance_report(t, r.sample) for t, r in sorted(reps.items())]
        dks = ", ".join(f"{r.d_K:.3f}" for r in reports)
        try:
            fit = fit_rate(reports, "d_K")
            good = SLOPE_RANGE[0] <= fit.slope <= SLOPE_RANGE[1]
            lines.append(f"{label}: slope {fit.slope:+.3f} over t={list(fit.t_used)} (d_K {dks})")
        except InsufficientSignal as e:
            good = False
            lines.append(f"{label}: no fit, {e} (d_K {dks}, band {reports[0].dkw_band:.4f})")
        ok &= good
    acceptance(5, ok, f"{elapsed:.0f}s; " + "; ".join(lines))
    assert ok


def test_criterion_6_variance_growth(acceptance, rate_runs):
    runs, _ = rate_runs
    lines = []
    ok = theorem53_lower_bound(LowerBoundInput(1, 1, 1, 1, 1, 1)) == 1 / 256
    lines.append(f"theorem53 hand case = {theorem53_lower_bound(LowerBoundInput(1, 1, 1, 1, 1, 1))!r}")
    for label in ("knn a=0", "voronoi edge length"):
        reps = runs[label]
        per_t = {t: variance_from_samples(r.raw).variance / t for t, r in reps.items()}
        ref = (per_t[RATE_T[-1]] + per_t[RATE_T[-2]]) / 2
        ratios = [per_t[t] / ref for t in RATE_T]
        good = all(0.7 <= q <= 1.4 for q in ratios)
        ok &= good
        lines.append(f"{label}: Var/t ratios " + ", ".join(f"{q:.3f}" for q in ratios))
    acceptance(6, ok, "; ".join(lines))
    assert ok


# --- 7 -----------------------------------------------------------------------


def test_criterion_7_oracles(acceptance):
    rng = np.random.default_rng(700)
    knn_ok = 0
    for _ in range(200):
        pts = rng.random((int(rng.integers(2, 150)), 2))
        k, alpha = int(rng.integers(1, 4)), float(rng.choice([0.0, 1.0, 2.0]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            knn_ok += knn_edge_power_value(pts, k, alpha) == knn_edge_power_bruteforce(pts, k, alpha)
    vor_ok, worst = 0, 0.0
    for _ in range(100):
        pts = rng.random((int(rng.integers(2, 51)), 2))
        a, b = voronoi_edge_length(pts, UNIT), voronoi_edge_length_halfplane(pts)
        rel = abs(a - b) / abs(b)
        worst = max(worst, rel)
        vor_ok += rel <= 1e-9
    spec, model = build("knn", {"alpha": 1.0}, 60.0)
    id_ok = 0
    for i in range(1000):
        gen = RngStream(701, i).generator()
        base = sample_poisson(model, gen)
        x1, x2 = gen.random(2), gen.random(2)
        d = diff2(spec, base, x1, x2)
        id_ok += d == diff1(spec, add_points(base, [x2]), x1) - diff1(spec, base, x1)
    ok = knn_ok == 200 and vor_ok == 100 and id_ok == 1000
    acceptance(7, ok, f"knn exact {knn_ok}/200; voronoi within 1e-9 {vor_ok}/100 (worst {worst:.1e}); "
               f"diff2 identity {id_ok}/1000")
    assert ok


# --- 8 -----------------------------------------------------------------------


def test_criterion_8_determinism(acceptance, tmp_path):
    cfg = {"functional": {"name": "knn", "params": {"alpha": 1.0}}, "model": {"t": [30, 60]},
           "tasks": ["variance", "gammas", "bounds", "stabilization", "clt"],
           "mc": {"n_outer": 40, "n_eta": 8, "n_reps": 200, "n_pilot": 300, "n_boot": 30,
                  "n_pair": 4, "lattice_per_axis": 4, "n_random_probes": 8},
           "seed": 8, "output": {"formats": ["csv", "json"]}}
    path = tmp_path / "det.json"
    path.write_text(json.dumps(cfg))
    digests = {}
    saved = default_threads()
    try:
        for n in (1, 2, 8):
            out = tmp_path / f"threads{n}"
            assert cli.main(["run", "--config", str(path), "--threads", str(n), "--out", str(out)]) == 0
            digests[n] = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())}
    finally:
        set_default_threads(saved)
    ok = len(digests[1]) >= 4 and digests[1] == digests[2] == digests[8]
    acceptance(8, ok, f"{len(digests[1])} output files identical across threads 1/2/8: {ok}")
    assert ok
