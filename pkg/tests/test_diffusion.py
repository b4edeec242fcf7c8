import numpy as np
import pytest

from tordiff.diffusion import (
    WNParams,
    build_drift_matrix,
    gamma_t,
    langevin_drift,
    mat_exp_2x2,
    stationary_cov,
    vm_drift,
    wn_drift,
    wn_drift_jacobian,
)
from tordiff.torus import wn_log_density, wrap


def params2(a1=1.0, a2=1.0, a3=0.0, mu=(0.0, 0.0), s1=1.0, s2=1.0):
    return WNParams(alpha=[a1, a2, a3], mu=mu, sigma=[s1, s2])


def taylor_expm(A, t, order=30, squarings=20):
    """Independent scaling-and-squaring series oracle for e^{tA}."""
    B = np.asarray(A) * t / (2.0**squarings)
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, order):
        term = term @ B / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


class TestWNParams:
    def test_constraint_violation(self):
        with pytest.raises(ValueError):
            params2(a1=1.0, a2=1.0, a3=1.0)
        with pytest.raises(ValueError):
            params2(a1=-1.0)
        with pytest.raises(ValueError):
            WNParams(alpha=[1.0], mu=[0.0], sigma=[-0.5])

    def test_p1_reduction(self):
        par = WNParams(alpha=[2.0], mu=[0.5], sigma=[1.5])
        assert par.p == 1
        assert build_drift_matrix(par) == pytest.approx(np.array([[2.0]]))
        assert par.stationary_covariance()[0, 0] == pytest.approx(
            1.5**2 / (2 * 2.0)
        )

    def test_mu_is_wrapped(self):
        par = params2(mu=(3 * np.pi / 2, 0.0))
        assert par.mu[0] == pytest.approx(-np.pi / 2)


class TestDriftMatrix:
    def test_decoupled_identity(self):
        assert np.allclose(build_drift_matrix(params2()), np.eye(2))

    def test_direct_substitution(self):
        A = build_drift_matrix(params2(a1=2.0, a2=1.0, a3=0.5))
        assert np.allclose(A, [[2.0, 0.5], [0.5, 1.0]])

    def test_offdiag_scaling(self):
        A = build_drift_matrix(params2(a1=2.0, a2=1.0, a3=0.5, s1=2.0, s2=0.5))
        assert A[0, 1] == pytest.approx(0.5 * 2.0 / 0.5)
        assert A[1, 0] == pytest.approx(0.5 * 0.5 / 2.0)

    def test_stationary_offdiag_sign_opposes_alpha3(self):
        for a3 in (-0.6, 0.4):
            par = params2(a1=1.3, a2=0.9, a3=a3)
            S = par.stationary_covariance()
            assert np.sign(S[0, 1]) == -np.sign(a3)


class TestStationaryCov:
    def test_decoupled(self):
        S = stationary_cov(np.eye(2), np.eye(2))
        assert np.allclose(S, 0.5 * np.eye(2))

    def test_closed_form_against_inverse_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a1, a2 = rng.uniform(0.2, 3.0, 2)
            a3 = rng.uniform(-1, 1) * np.sqrt(a1 * a2) * 0.95
            s1, s2 = rng.uniform(0.3, 2.0, 2)
            par = params2(a1, a2, a3, s1=s1, s2=s2)
            A = build_drift_matrix(par)
            Sig = par.sigma_matrix()
            S = stationary_cov(A, Sig)
            oracle = 0.5 * np.linalg.inv(A) @ Sig
            assert np.allclose(S, oracle, atol=1e-10)
            det = a1 * a2 - a3 * a3
            closed = np.array(
                [[a2 * s1**2, -a3 * s1 * s2], [-a3 * s1 * s2, a1 * s2**2]]
            ) / (2 * det)
            assert np.allclose(S, closed, atol=1e-10)
            assert np.allclose(S, S.T, atol=1e-12)

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            stationary_cov(np.zeros((2, 2)), np.eye(2))


class TestLangevinDrift:
    def test_uniform_density_null_drift(self):
        b = langevin_drift(lambda th: np.zeros_like(th), np.eye(2))
        assert np.allclose(b(np.array([0.3, -1.0])), 0.0)

    def test_vm_density_gives_vm_drift(self):
        # grad log vM(mu, kappa) = kappa sin(mu - theta); with
        # kappa = 2 alpha / sigma^2 the Langevin drift is alpha sin(mu - theta)
        alpha, sigma, mu = 1.7, 0.8, 0.4
        kappa = 2 * alpha / sigma**2
        b = langevin_drift(
            lambda th: kappa * np.sin(mu - th), np.array([[sigma**2]])
        )
        th = np.linspace(-np.pi, np.pi, 23)[:, None]
        assert np.allclose(b(th), vm_drift(th, alpha, mu), atol=1e-10)

    def test_wn_density_gives_wn_drift(self):
        par = params2(a1=1.2, a2=0.7, a3=0.3, mu=(0.5, -0.9), s1=1.1, s2=0.6)
        S = par.stationary_covariance()
        Sinv = np.linalg.inv(S)
        K = 4

        def grad_log_wn(th):
            h = 1e-6
            th = np.atleast_2d(th)
            g = np.empty_like(th)
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                g[:, j] = (
                    wn_log_density(th + e, par.mu, S, K)
                    - wn_log_density(th - e, par.mu, S, K)
                ) / (2 * h)
            return g

        rng = np.random.default_rng(11)
        th = rng.uniform(-np.pi, np.pi, (200, 2))
        b_lang = langevin_drift(grad_log_wn, par.sigma_matrix())(th)
        b_wn = wn_drift(th, par, trunc=K)
        assert np.max(np.abs(b_lang - b_wn)) < 1e-5


class TestWNDrift:
    def test_zero_at_mean(self):
        par = params2(a1=1.5, a2=0.8, a3=0.2, mu=(0.7, -0.3))
        assert np.allclose(wn_drift(par.mu, par), 0.0, atol=1e-12)

    def test_zero_at_antipode_p1(self):
        par = WNParams(alpha=[1.0], mu=[0.3], sigma=[1.0])
        b = wn_drift(np.array([wrap(0.3 + np.pi)]), par)
        assert abs(b[0]) < 1e-10

    def test_near_linear_at_mean(self):
        par = WNParams(alpha=[1.0], mu=[0.0], sigma=[1.0])
        b = wn_drift(np.array([0.01]), par)
        assert b[0] == pytest.approx(-0.01, rel=0.02)

    def test_periodicity(self):
        par = params2(a1=1.5, a2=1.0, a3=-0.5, mu=(0.2, 0.4), s1=1.2, s2=0.8)
        rng = np.random.default_rng(13)
        th = rng.uniform(-np.pi, np.pi, (100, 2))
        b0 = wn_drift(th, par)
        for k in ((1, 0), (-2, 1), (2, 2), (0, -1)):
            b1 = wn_drift(wrap(th + 2 * np.pi * np.asarray(k)), par)
            assert np.allclose(b0, b1, atol=1e-10)

    def test_jacobian_matches_finite_differences(self):
        par = params2(a1=1.4, a2=0.9, a3=0.4, mu=(0.3, -0.6), s1=1.0, s2=1.3)
        rng = np.random.default_rng(17)
        th = rng.uniform(-np.pi, np.pi, (50, 2))
        J = wn_drift_jacobian(th, par)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (wn_drift(th + e, par) - wn_drift(th - e, par)) / (2 * h)
            assert np.allclose(J[..., j], fd, atol=1e-6)


class TestVMDrift:
    def test_equilibria_and_max(self):
        assert vm_drift(0.4, 2.0, 0.4) == pytest.approx(0.0)
        assert vm_drift(0.4 - np.pi / 2, 5.0, 0.4) == pytest.approx(5.0)
        assert vm_drift(wrap(0.4 + np.pi), 2.0, 0.4) == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(ValueError):
            vm_drift(0.0, -1.0, 0.0)


class TestMatExp:
    def test_t_zero_identity(self):
        A = np.array([[1.5, -0.5], [-0.5, 1.0]])
        assert np.allclose(mat_exp_2x2(A, 0.0), np.eye(2))

    def test_diagonal(self):
        E = mat_exp_2x2(np.diag([1.0, 2.0]), 1.0)
        assert np.allclose(E, np.diag([np.e, np.e**2]))

    def test_against_taylor_oracle(self):
        A = np.array([[1.5, -0.5], [-0.5, 1.0]])
        for t in (0.1, 1.0, 5.0):
            got = mat_exp_2x2(A, t)
            ref = taylor_expm(A, t)
            assert np.allclose(got, ref, rtol=1e-9)

    def test_random_matrices_incl_complex_eigs(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            A = rng.normal(size=(2, 2))
            t = rng.uniform(0, 3)
            assert np.allclose(
                mat_exp_2x2(A, t), taylor_expm(A, t), rtol=1e-8, atol=1e-10
            )

    def test_semigroup(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            A = rng.normal(size=(2, 2))
            t, s = rng.uniform(0, 3, 2)
            lhs = mat_exp_2x2(A, t + s)
            rhs = mat_exp_2x2(A, t) @ mat_exp_2x2(A, s)
            assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)

    def test_degenerate_q_zero(self):
        # equal eigenvalues: q = 0 exactly, series limit must kick in
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        assert np.allclose(mat_exp_2x2(A, 1.0), taylor_expm(A, 1.0), rtol=1e-10)


class TestGamma:
    def ou_pair(self):
        par = params2(a1=2.0, a2=1.0, a3=0.5)
        return build_drift_matrix(par), par.sigma_matrix()

    def test_stationary_limit(self):
        A, Sig = self.ou_pair()
        lam = np.min(np.linalg.eigvals(A).real)
        t = 50.0 / lam
        assert np.allclose(gamma_t(A, Sig, t), stationary_cov(A, Sig), atol=1e-8)

    def test_infinitesimal_limit(self):
        A, Sig = self.ou_pair()
        t = 1e-6
        err = np.max(np.abs(gamma_t(A, Sig, t) / t - Sig))
        assert err < 1e-4 * np.max(np.abs(Sig))

    def test_against_simpson_quadrature(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        Sig = np.eye(2)
        t = 0.7
        n = 1000
        s = np.linspace(0, t, 2 * n + 1)
        vals = np.empty((s.size, 2, 2))
        for i, si in enumerate(s):
            E = mat_exp_2x2(A, -si)
            vals[i] = E @ Sig @ E.T
        h = t / (2 * n)
        simpson = (
            vals[0]
            + vals[-1]
            + 4 * vals[1:-1:2].sum(axis=0)
            + 2 * vals[2:-2:2].sum(axis=0)
        ) * (h / 3)
        assert np.allclose(gamma_t(A, Sig, t), simpson, atol=1e-7)

    def test_monotone_in_t(self):
        A, Sig = self.ou_pair()
        ts = [0.05, 0.2, 0.5, 1.0, 2.0, 5.0]
        for a, b in zip(ts[:-1], ts[1:]):
            diff = gamma_t(A, Sig, b) - gamma_t(A, Sig, a)
            assert np.min(np.linalg.eigvalsh(diff)) >= -1e-10

    def test_p1_closed_form(self):
        G = gamma_t([[1.5]], [[0.81]], 0.4)
        expect = 0.81 * (1 - np.exp(-2 * 1.5 * 0.4)) / (2 * 1.5)
        assert G[0, 0] == pytest.approx(expect, rel=1e-12)
