import numpy as np
import pytest

from poisson_stein import kernels
from poisson_stein._accel import _FLAG, HAVE_NUMBA, numba_enabled
from poisson_stein.functionals import build
from poisson_stein.point_process import RngStream, sample_poisson


def _both(monkeypatch, fn):
    monkeypatch.setenv(_FLAG, "0")
    a = fn()
    monkeypatch.setenv(_FLAG, "1")
    b = fn()
    return a, b


def test_flag_switches_backend(monkeypatch):
    monkeypatch.setenv(_FLAG, "1")
    assert not numba_enabled()
    monkeypatch.setenv(_FLAG, "0")
    assert numba_enabled() == HAVE_NUMBA


@pytest.mark.parametrize("k", [1, 2, 4])
def test_knn_table_identical(monkeypatch, k):
    pts = np.random.default_rng(k).random((300, 2))
    a, b = _both(monkeypatch, lambda: kernels.knn_table(pts, k))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.5])
def test_knn_edge_power_agrees(monkeypatch, alpha):
    pts = np.random.default_rng(3).random((400, 2))
    a, b = _both(monkeypatch, lambda: kernels.knn_edge_power(pts, 2, alpha))
    if alpha == 0.0:
        assert a == b
    else:
        assert a == pytest.approx(b, rel=1e-13)


def test_clipped_lengths_agree(monkeypatch):
    rng = np.random.default_rng(4)
    n = 2000
    starts = rng.random((n, 2)) * 1.4 - 0.2
    ang = rng.random(n) * 2 * np.pi
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    smax = np.where(rng.random(n) < 0.1, np.inf, rng.random(n) * 0.3)
    a, b = _both(monkeypatch, lambda: kernels.clipped_lengths(starts, dirs, smax, (0.0, 0.0), (1.0, 1.0)))
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("code", [kernels.KERNEL_OU, kernels.KERNEL_BOX])
def test_shot_noise_field_agrees(monkeypatch, code):
    rng = np.random.default_rng(5)
    coords = rng.random((200, 1)) * 212 - 12
    marks = rng.random(200) + 0.5
    a, b = _both(monkeypatch, lambda: kernels.shot_noise_field(
        coords, marks, code, 1.0, np.array([1.0]), 12.0, np.array([0.0]), np.array([0.5]), (400,)))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_shot_noise_field_2d_agrees(monkeypatch):
    rng = np.random.default_rng(6)
    coords = rng.random((60, 2)) * 12 - 1
    marks = np.ones(60)
    a, b = _both(monkeypatch, lambda: kernels.shot_noise_field(
        coords, marks, kernels.KERNEL_EXP_ORTHANT, 2.0, np.array([1.0, 0.5]), 1.5,
        np.zeros(2), np.array([0.25, 0.25]), (40, 40)))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("name", ["knn", "voronoi2d", "shot_noise"])
def test_functionals_agree_across_backends(monkeypatch, name):
    spec, model = build(name, {}, 60.0)
    cfg = sample_poisson(model, RngStream(7))
    a, b = _both(monkeypatch, lambda: spec(cfg))
    assert a == pytest.approx(b, rel=1e-12)
