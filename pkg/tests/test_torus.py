import numpy as np
import pytest

from tordiff.torus import (
    angular_distance,
    default_truncation,
    lattice,
    winding_weights,
    wn_density,
    wrap,
)


def test_wrap_values():
    assert wrap(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert wrap(np.pi) == pytest.approx(-np.pi)
    assert wrap(-np.pi - 0.1) == pytest.approx(np.pi - 0.1)


def test_wrap_idempotent():
    rng = np.random.default_rng(0)
    x = rng.uniform(-20, 20, size=(100, 2))
    assert np.allclose(wrap(wrap(x)), wrap(x))


def test_wrap_range_and_rejects_nonfinite():
    rng = np.random.default_rng(1)
    x = rng.uniform(-50, 50, 1000)
    w = wrap(x)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    with pytest.raises(ValueError):
        wrap(np.nan)
    with pytest.raises(ValueError):
        wrap([0.0, np.inf])


def test_angular_distance():
    assert angular_distance(0.0, 0.0) == 0.0
    assert angular_distance(np.pi - 0.05, -np.pi + 0.05) == pytest.approx(0.1)
    assert angular_distance([0.0, 0.0], [np.pi / 2, 0.0]) == pytest.approx(np.pi / 2)
    with pytest.raises(ValueError):
        angular_distance(np.zeros(2), np.zeros(1))


def test_wn_density_uniform_limit():
    # huge variance: the wrapped normal flattens to 1/(2*pi)
    val = wn_density([0.7], [0.0], [[1e4]], trunc=200)
    assert val == pytest.approx(1 / (2 * np.pi), rel=1e-3)


def test_wn_density_peak_matches_normal():
    # sigma^2 = 0.01 at the mean: wrapping correction is below 1e-10,
    # so the peak equals the plain normal pdf 1/sqrt(2*pi*0.01)
    expect = 1.0 / np.sqrt(2 * np.pi * 0.01)
    val = wn_density([0.0], [0.0], [[0.01]], trunc=3)
    assert val == pytest.approx(expect, abs=1e-10)
    assert expect == pytest.approx(3.98942, abs=1e-5)


def test_wn_density_reflection_symmetry():
    rng = np.random.default_rng(2)
    mu = np.array([0.4, -1.1])
    cov = np.array([[0.8, 0.2], [0.2, 0.5]])
    for _ in range(20):
        th = rng.uniform(-np.pi, np.pi, 2)
        a = wn_density(th, mu, cov, trunc=3)
        b = wn_density(wrap(2 * mu - th), mu, cov, trunc=3)
        assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("sigma", [0.1, 0.5, 1.0, 3.0])
def test_wn_density_integrates_to_one_1d(sigma):
    grid = -np.pi + (np.arange(512) + 0.5) * (2 * np.pi / 512)
    vals = wn_density(grid[:, None], [0.3], [[sigma**2]], trunc=3)
    mass = vals.sum() * (2 * np.pi / 512)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_wn_density_integrates_to_one_2d():
    n = 128
    g = -np.pi + (np.arange(n) + 0.5) * (2 * np.pi / n)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    cov = np.array([[1.0, -0.3], [-0.3, 0.6]])
    vals = wn_density(pts, [0.5, -0.2], cov, trunc=3)
    mass = vals.sum() * (2 * np.pi / n) ** 2
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_increasing_trunc_never_hurts_quadrature():
    grid = -np.pi + (np.arange(512) + 0.5) * (2 * np.pi / 512)
    errs = []
    for k in (1, 2, 3, 4):
        vals = wn_density(grid[:, None], [0.0], [[2.5**2]], trunc=k)
        errs.append(abs(vals.sum() * (2 * np.pi / 512) - 1.0))
    assert all(errs[i + 1] <= errs[i] + 1e-15 for i in range(len(errs) - 1))


def test_winding_weights_normalize_and_symmetry():
    cov = np.array([[0.6, 0.1], [0.1, 0.9]])
    rng = np.random.default_rng(3)
    th = rng.uniform(-np.pi, np.pi, (50, 2))
    w = winding_weights(th, [0.1, 0.2], cov, trunc=2)
    assert np.allclose(w.sum(axis=-1), 1.0)
    # theta = mu: weights symmetric under k -> -k (lattice order reversal)
    w0 = winding_weights([0.1, 0.2], [0.1, 0.2], cov, trunc=2)
    assert np.allclose(w0, w0[::-1])


def test_winding_weights_concentration_limit():
    w = winding_weights([0.05], [0.0], [[1e-4]], trunc=2)
    mid = w.shape[-1] // 2
    assert w[mid] == pytest.approx(1.0, abs=1e-12)


def test_winding_weights_shift_invariance():
    # adding 2*pi*k to theta and wrapping leaves the weights unchanged
    cov = np.array([[1.2]])
    th = np.array([2.1])
    w1 = winding_weights(th, [0.3], cov, trunc=3)
    w2 = winding_weights(wrap(th + 2 * np.pi * 5), [0.3], cov, trunc=3)
    assert np.allclose(w1, w2)


def test_lattice_shape_and_order():
    l1 = lattice(2, 1)
    assert l1.shape == (5, 1)
    assert np.allclose(l1[:, 0], 2 * np.pi * np.arange(-2, 3))
    l2 = lattice(1, 2)
    assert l2.shape == (9, 2)
    assert np.allclose(l2[0], [-2 * np.pi, -2 * np.pi])
    with pytest.raises(ValueError):
        lattice(0, 1)


def test_default_truncation_rule():
    assert default_truncation([[1.0, 0.0], [0.0, 4.0]]) == 2
    assert default_truncation([[4.1**2]]) == 4


def test_rejects_bad_covariance():
    with pytest.raises(ValueError):
        wn_density([0.0], [0.0], [[-1.0]], trunc=2)
    with pytest.raises(ValueError):
        wn_density([0.0, 0.0], [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], trunc=2)
