import numpy as np
import pytest
from scipy import stats

from poisson_stein.point_process import (
    ConfigurationTooLarge,
    DomainError,
    IntensityModel,
    MarkMeasure,
    PointConfiguration,
    RngStream,
    Window,
    add_points,
    model_from_json,
    model_to_json,
    sample_poisson,
    superpose,
    thin,
)

UNIT = Window.cube(1.0, 2)


def test_window_rejects_degenerate_box():
    with pytest.raises(DomainError):
        Window((0.0, 0.0), (1.0, 0.0))
    with pytest.raises(DomainError):
        Window((0.0,), (-1.0,))


def test_window_volume_is_product_of_sides():
    w = Window((0.0, -1.0, 2.0), (2.0, 2.0, 2.5))
    assert w.volume == pytest.approx(2.0 * 3.0 * 0.5)
    assert Window.from_dict(w.to_dict()) == w


def test_mean_and_variance_of_count():
    model = IntensityModel(UNIT, 4.0)
    root = RngStream(3)
    n = 100_000
    counts = np.array([len(sample_poisson(model, root.child(i))) for i in range(n)], dtype=float)
    se_mean = np.sqrt(4.0 / n)
    se_var = np.sqrt((4.0 + 2 * 16.0) / n)  # Var(s^2) for Poisson(4): (mu4 - sigma^4 (n-3)/(n-1)) / n
    assert abs(counts.mean() - 4.0) <= 3 * se_mean
    assert abs(counts.var(ddof=1) - 4.0) <= 3 * se_var


def test_sampling_is_deterministic():
    model = IntensityModel(UNIT, 50.0)
    a = sample_poisson(model, RngStream(7, 11))
    b = sample_poisson(model, RngStream(7, 11))
    c = sample_poisson(model, RngStream(7, 12))
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_points_lie_in_window():
    w = Window((1.0, 2.0), (3.0, 2.5))
    cfg = sample_poisson(IntensityModel(w, 100.0), RngStream(1))
    assert np.all(w.contains(cfg.coords))


def test_too_large_guard():
    with pytest.raises(ConfigurationTooLarge):
        sample_poisson(IntensityModel(UNIT, 1e9), RngStream(0))


def test_marks_attached():
    marks = MarkMeasure.from_atoms([-1.0, 2.0], [0.25, 0.75])
    model = IntensityModel(UNIT, 200.0, marks)
    assert model.total_mass == pytest.approx(200.0)
    cfg = sample_poisson(model, RngStream(2))
    assert cfg.marks is not None and set(np.unique(cfg.marks)) <= {-1.0, 2.0}
    assert marks.abs_moment(1) == pytest.approx(0.25 + 1.5)
    assert marks.abs_moment(2) == pytest.approx(0.25 + 3.0)


def test_mark_measure_validation():
    with pytest.raises(DomainError):
        MarkMeasure.from_atoms([1.0], [0.0])


def test_add_points_to_empty():
    empty = PointConfiguration.empty(UNIT)
    x = np.array([[0.3, 0.4]])
    out = add_points(empty, x)
    assert len(out) == 1 and np.array_equal(out.coords, x)
    assert len(empty) == 0  # value semantics


def test_add_points_count_and_associativity():
    base = sample_poisson(IntensityModel(UNIT, 20.0), RngStream(4))
    a, b = [[0.1, 0.2]], [[0.7, 0.9]]
    one = add_points(add_points(base, a), b)
    two = add_points(base, a + b)
    assert len(two) == len(base) + 2
    assert one.same_multiset(two)


def test_add_points_outside_window():
    with pytest.raises(DomainError):
        add_points(PointConfiguration.empty(UNIT), [[1.5, 0.5]])


def test_marked_insert_requires_mark():
    cfg = PointConfiguration.empty(UNIT, marked=True)
    with pytest.raises(DomainError):
        add_points(cfg, [[0.5, 0.5]])
    assert len(add_points(cfg, [[0.5, 0.5]], [2.0])) == 1


def test_thin_extremes():
    cfg = sample_poisson(IntensityModel(UNIT, 30.0), RngStream(5))
    assert thin(cfg, 1.0, RngStream(0)) is cfg
    assert len(thin(cfg, 0.0, RngStream(0))) == 0
    with pytest.raises(DomainError):
        thin(cfg, 1.5, RngStream(0))


def test_thinning_intensity():
    t, s, n = 20.0, 0.3, 10_000
    model = IntensityModel(UNIT, t)
    root = RngStream(6)
    counts = np.array([len(thin(sample_poisson(model, root.child(i, 0)), s, root.child(i, 1))) for i in range(n)])
    assert abs(counts.mean() - s * t) <= 3 * np.sqrt(s * t / n)


def _counts(fn, n):
    return np.array([fn(i) for i in range(n)])


def _chi2_same(a, b):
    hi = int(max(a.max(), b.max())) + 1
    ca, cb = np.bincount(a, minlength=hi), np.bincount(b, minlength=hi)
    keep = (ca + cb) >= 10
    table = np.vstack([ca[keep], cb[keep]])
    return stats.chi2_contingency(table)[1]


def test_superposition_count_law():
    m1, m2, m12 = (IntensityModel(UNIT, t) for t in (3.0, 5.0, 8.0))
    root = RngStream(8)
    n = 10_000
    sup = _counts(lambda i: len(superpose(sample_poisson(m1, root.child(0, i)), sample_poisson(m2, root.child(1, i)))), n)
    direct = _counts(lambda i: len(sample_poisson(m12, root.child(2, i))), n)
    assert _chi2_same(sup, direct) > 0.01


def test_thin_plus_replenish_count_law():
    t, s = 8.0, 0.4
    model = IntensityModel(UNIT, t)
    root = RngStream(9)
    n = 10_000

    def one(i):
        eta = sample_poisson(model, root.child(0, i))
        kept = thin(eta, s, root.child(1, i))
        return len(superpose(kept, sample_poisson(model.with_t((1 - s) * t), root.child(2, i))))

    direct = _counts(lambda i: len(sample_poisson(model, root.child(3, i))), n)
    assert _chi2_same(_counts(one, n), direct) > 0.01


def test_model_json_roundtrip():
    model = IntensityModel(Window((0.0,), (5.0,)), 2.5, MarkMeasure.from_atoms([1.0, 3.0], [0.5, 0.5]))
    back = model_from_json(model_to_json(model))
    assert back.t == model.t and back.window == model.window
    assert back.marks.abs_moment(2) == pytest.approx(model.marks.abs_moment(2))


def test_csv_roundtrip():
    cfg = sample_poisson(IntensityModel(UNIT, 10.0, MarkMeasure.from_atoms([2.0], [1.0])), RngStream(1))
    back = PointConfiguration.from_csv(cfg.to_csv(), UNIT)
    assert back.tobytes() == cfg.tobytes()


def test_child_streams_differ():
    r = RngStream(1)
    assert r.child(1) != r.child(2)
    assert r.child(1, 2) == r.child(1, 2)
    assert r.child(1).generator().random() != r.child(2).generator().random()
