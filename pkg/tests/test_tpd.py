import numpy as np
import pytest
from scipy.stats import chisquare

from tordiff.diffusion import WNParams, wn_drift
from tordiff.torus import wn_density, wrap
from tordiff.tpd import (
    TpdKind,
    Trajectory,
    euler_tpd,
    sample_stationary,
    sample_wou,
    shoji_ozaki_tpd,
    simulate_euler,
    so_moments,
    wou_tpd,
)


def params2(a1=1.0, a2=1.0, a3=0.5, mu=(np.pi / 2, -np.pi / 2), s1=1.0, s2=1.0):
    return WNParams(alpha=[a1, a2, a3], mu=mu, sigma=[s1, s2])


def grid1(n):
    return (-np.pi + (np.arange(n) + 0.5) * (2 * np.pi / n))[:, None]


def grid2(n):
    g = -np.pi + (np.arange(n) + 0.5) * (2 * np.pi / n)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def tpd_on_grid(kind, pts, theta_s, par, t):
    fn = {
        TpdKind.EULER: euler_tpd,
        TpdKind.SHOJI_OZAKI: shoji_ozaki_tpd,
        TpdKind.WOU: wou_tpd,
    }[kind]
    return np.array([fn(p, theta_s, par, t) for p in pts])


class TestTpdKind:
    def test_parse(self):
        assert TpdKind.parse("WOU") is TpdKind.WOU
        assert TpdKind.parse("shoji-ozaki") is TpdKind.SHOJI_OZAKI
        assert TpdKind.parse("euler") is TpdKind.EULER
        with pytest.raises(ValueError):
            TpdKind.parse("milstein")


class TestTrajectory:
    def test_validation(self):
        with pytest.raises(ValueError):
            Trajectory(delta=0.0, points=np.zeros((3, 1)))
        with pytest.raises(ValueError):
            Trajectory(delta=0.1, points=np.zeros((1, 1)))
        tr = Trajectory(delta=0.5, points=np.array([[0.0], [4.0]]))
        assert tr.n_transitions == 1
        assert tr.p == 1
        assert tr.points[1, 0] == pytest.approx(wrap(4.0))
        assert tr.total_time == pytest.approx(0.5)


class TestEuler:
    def test_small_step_mode_location(self):
        par = WNParams(alpha=[1.0], mu=[0.3], sigma=[1.0])
        phi = np.array([-2.0])
        delta = 1e-6
        pts = grid1(1024)
        vals = tpd_on_grid(TpdKind.EULER, pts, phi, par, delta)
        mode = pts[np.argmax(vals), 0]
        target = wrap(phi + wn_drift(phi, par) * delta)[0]
        assert abs(wrap(mode - target)) < 2 * np.pi / 1024

    def test_uniform_limit_large_delta(self):
        par = params2()
        pts = grid2(64)
        vals = tpd_on_grid(TpdKind.EULER, pts, np.array([0.5, -0.4]), par, 100.0)
        assert np.max(np.abs(vals - 1 / (2 * np.pi) ** 2)) < 1e-3

    def test_from_mean_equals_wn_density(self):
        par = WNParams(alpha=[1.3], mu=[0.4], sigma=[0.9])
        delta = 0.3
        pts = grid1(101)
        vals = tpd_on_grid(TpdKind.EULER, pts, par.mu, par, delta)
        direct = wn_density(pts, par.mu, [[par.sigma[0] ** 2 * delta]])
        assert np.allclose(vals, direct, rtol=1e-10)


class TestShojiOzaki:
    def test_exact_on_unwrapped_linear_ou(self):
        # Linear drift alpha*(mu - x) has Jacobian -alpha: the SO moments
        # must equal the exact OU transition moments to machine precision.
        alpha, mu, sigma = 1.7, 0.4, 0.8
        for delta in (0.05, 0.5, 2.0, 10.0):
            for phi in (-2.0, 0.1, 2.5):
                b = np.array([[alpha * (mu - phi)]])
                J = np.array([[[-alpha]]])
                V = np.array([[sigma**2]])
                mean_off, cov, ok = so_moments(b, J, V, delta)
                assert ok[0]
                mean = phi + mean_off[0, 0]
                exact_mean = mu + np.exp(-alpha * delta) * (phi - mu)
                exact_var = sigma**2 * (1 - np.exp(-2 * alpha * delta)) / (2 * alpha)
                assert mean == pytest.approx(exact_mean, abs=1e-12)
                assert cov[0, 0, 0] == pytest.approx(exact_var, abs=1e-12)

    def test_exact_on_linear_ou_2d(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        V = np.diag([1.0, 1.44])
        mu = np.array([0.3, -0.2])
        phi = np.array([1.0, 2.0])
        delta = 0.7
        from tordiff.diffusion import gamma_t, mat_exp_2x2

        b = (A @ (mu - phi))[None, :]
        J = (-A)[None, :, :]
        mean_off, cov, ok = so_moments(b, J, V, delta)
        assert ok[0]
        exact_mean = mu + mat_exp_2x2(A, -delta) @ (phi - mu)
        assert np.allclose(phi + mean_off[0], exact_mean, atol=1e-12)
        assert np.allclose(cov[0], gamma_t(A, V, delta), atol=1e-12)

    def test_large_delta_from_mean(self):
        # at phi = mu the drift vanishes, so for Delta -> infinity the SO
        # density tends to a WN centred at mu with covariance -J^{-1}V/2
        par = WNParams(alpha=[1.0], mu=[0.5], sigma=[1.0])
        from tordiff.diffusion import wn_drift_jacobian

        J = wn_drift_jacobian(par.mu, par)[0, 0]
        assert J < 0
        lim_var = -0.5 * par.sigma[0] ** 2 / J
        pts = grid1(64)
        vals = tpd_on_grid(TpdKind.SHOJI_OZAKI, pts, par.mu, par, 50.0)
        direct = wn_density(pts, par.mu, [[lim_var]])
        assert np.allclose(vals, direct, rtol=1e-8)

    def test_fallback_at_antipode(self):
        # positive Jacobian eigenvalue at the antipodal point: the SO tpd
        # would explode, so the implementation must return the Euler value
        par = WNParams(alpha=[1.0], mu=[0.0], sigma=[1.0])
        phi = np.array([wrap(np.pi - 1e-9)])
        from tordiff.diffusion import wn_drift_jacobian

        assert wn_drift_jacobian(phi, par)[0, 0] > 0
        for th in (-1.0, 0.2, 2.0):
            so = shoji_ozaki_tpd(np.array([th]), phi, par, 5.0)
            eu = euler_tpd(np.array([th]), phi, par, 5.0)
            assert so == pytest.approx(eu, rel=1e-12)


class TestWou:
    def test_point_mass_limit_1d(self):
        # grid-discretized tpd (cell masses) vs the point mass at theta_s
        par = WNParams(alpha=[1.0], mu=[0.3], sigma=[1.0])
        n = 128
        pts = grid1(n)
        theta_s = pts[40]
        vals = tpd_on_grid(TpdKind.WOU, pts, theta_s, par, 1e-6)
        probs = vals / vals.sum()
        point = np.zeros(n)
        point[40] = 1.0
        tv = 0.5 * np.sum(np.abs(probs - point))
        assert tv < 1e-2

    def test_point_mass_limit_2d(self):
        par = params2()
        n = 128
        pts = grid2(n)
        idx = 40 * n + 100
        theta_s = pts[idx]
        from tordiff.tpd import _wou_log_tpd

        vals = np.exp(_wou_log_tpd(pts, np.broadcast_to(theta_s, pts.shape), par, 1e-6, 2))
        probs = vals / vals.sum()
        point = np.zeros(n * n)
        point[idx] = 1.0
        assert 0.5 * np.sum(np.abs(probs - point)) < 1e-2

    def test_sdi_correct_large_t(self):
        par = params2()
        S = par.stationary_covariance()
        pts = grid2(16)
        stat = wn_density(pts, par.mu, S)
        for theta_s in (np.array([0.0, 0.0]), np.array([2.5, -3.0]), par.mu):
            vals = tpd_on_grid(TpdKind.WOU, pts, theta_s, par, 50.0)
            assert np.max(np.abs(vals - stat)) < 1e-6

    def test_detailed_balance(self):
        par = params2(a1=1.2, a2=0.8, a3=-0.4, s1=1.1, s2=0.7)
        S = par.stationary_covariance()
        rng = np.random.default_rng(5)
        for _ in range(500):
            th = rng.uniform(-np.pi, np.pi, 2)
            ts = rng.uniform(-np.pi, np.pi, 2)
            t = rng.uniform(0.05, 5.0)
            lhs = wn_density(ts, par.mu, S) * wou_tpd(th, ts, par, t)
            rhs = wn_density(th, par.mu, S) * wou_tpd(ts, th, par, t)
            assert abs(lhs - rhs) < 1e-9

    def test_euler_wou_small_delta_agreement(self):
        par = WNParams(alpha=[1.0], mu=[0.4], sigma=[1.0])
        pts = grid1(256)
        theta_s = np.array([1.2])
        delta = 1e-3
        e = tpd_on_grid(TpdKind.EULER, pts, theta_s, par, delta)
        w = tpd_on_grid(TpdKind.WOU, pts, theta_s, par, delta)
        assert np.max(np.abs(e - w)) < 1e-2


@pytest.mark.parametrize(
    "alpha,sigma", [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0), (2.0, 2.0)]
)
@pytest.mark.parametrize("delta", [0.05, 0.2, 0.5, 1.0])
def test_all_tpds_integrate_to_one(alpha, sigma, delta):
    par = params2(a1=alpha, a2=alpha, a3=alpha / 2, s1=sigma, s2=sigma)
    from tordiff.tpd import _euler_log_tpd, _so_log_tpd, _wou_log_tpd

    n = 128
    pts = grid2(n)
    theta_s = np.array([1.9, -0.7])
    ts = np.broadcast_to(theta_s, pts.shape)
    cell = (2 * np.pi / n) ** 2
    K = par.truncation()
    for kernel in (_euler_log_tpd, _so_log_tpd, _wou_log_tpd):
        mass = np.exp(kernel(pts, ts, par, delta, K)).sum() * cell
        assert mass == pytest.approx(1.0, abs=1e-4), kernel.__name__


class TestSimulateEuler:
    def test_deterministic_given_seed(self):
        par = params2()
        t1 = simulate_euler(par, [0.0, 0.0], 0.05, 200, refine_m=5, seed=7)
        t2 = simulate_euler(par, [0.0, 0.0], 0.05, 200, refine_m=5, seed=7)
        assert np.array_equal(t1.points, t2.points)
        t3 = simulate_euler(par, [0.0, 0.0], 0.05, 200, refine_m=5, seed=8)
        assert not np.array_equal(t1.points, t3.points)

    def test_noiseless_flow_to_mean(self):
        par = WNParams(alpha=[1.0], mu=[0.8], sigma=[1e-8])
        traj = simulate_euler(par, [-1.5], 0.05, 200, refine_m=10, seed=1)
        assert abs(wrap(traj.points[-1, 0] - 0.8)) < 1e-3

    def test_ergodic_histogram_matches_stationary(self):
        par = WNParams(alpha=[1.0], mu=[0.4], sigma=[1.0])
        traj = simulate_euler(par, [0.4], 0.05, 200_000, refine_m=10, seed=42)
        bins = np.linspace(-np.pi, np.pi, 65)
        counts, _ = np.histogram(traj.points[:, 0], bins=bins)
        freq = counts / counts.sum()
        centers = 0.5 * (bins[:-1] + bins[1:])
        p = wn_density(centers[:, None], par.mu, par.stationary_covariance())
        p = p * (2 * np.pi / 64)
        p = p / p.sum()
        assert np.sum(np.abs(freq - p)) < 0.05


class TestSampleWou:
    def test_point_mass_limit(self):
        par = params2()
        ts = np.array([1.0, -2.0])
        draw = sample_wou(ts, par, 1e-8, seed=3)
        assert np.max(np.abs(wrap(draw - ts))) < 1e-3

    def test_stationary_chi_square(self):
        par = params2()
        draws = sample_wou(
            np.array([2.0, 2.0]), par, 50.0, seed=11, size=100_000
        )
        n = 16
        cell = 2 * np.pi / n
        ix = np.floor((draws[:, 0] + np.pi) / cell).astype(int).clip(0, n - 1)
        iy = np.floor((draws[:, 1] + np.pi) / cell).astype(int).clip(0, n - 1)
        counts = np.bincount(ix * n + iy, minlength=n * n)
        # cell probabilities from an oversampled grid (4x4 per cell)
        over = 4
        fine = wn_density(grid2(n * over), par.mu, par.stationary_covariance())
        fine = fine.reshape(n, over, n, over).mean(axis=(1, 3)).ravel()
        p = fine / fine.sum()
        stat, pval = chisquare(counts, p * counts.sum())
        assert pval > 0.01

    def test_matches_density_chi_square(self):
        par = params2()
        theta_s = np.array([0.5, -1.0])
        t = 0.25
        draws = sample_wou(theta_s, par, t, seed=13, size=100_000)
        n = 64
        cell = 2 * np.pi / n
        ix = np.floor((draws[:, 0] + np.pi) / cell).astype(int).clip(0, n - 1)
        iy = np.floor((draws[:, 1] + np.pi) / cell).astype(int).clip(0, n - 1)
        counts = np.bincount(ix * n + iy, minlength=n * n)
        from tordiff.tpd import _wou_log_tpd

        pts = grid2(n)
        p = np.exp(
            _wou_log_tpd(pts, np.broadcast_to(theta_s, pts.shape), par, t, 2)
        ) * cell**2
        p = p / p.sum()
        keep = p * counts.sum() >= 5  # merge ultra-sparse cells for validity
        stat, pval = chisquare(
            np.append(counts[keep], counts[~keep].sum()),
            np.append(p[keep], p[~keep].sum()) * counts.sum(),
        )
        assert pval > 0.01


def test_sample_stationary_moments():
    par = params2()
    draws = sample_stationary(par, n=50_000, seed=17)
    # circular means close to mu
    for j in range(2):
        z = np.exp(1j * draws[:, j])
        ang = np.angle(z.mean())
        assert abs(wrap(ang - par.mu[j])) < 0.05
