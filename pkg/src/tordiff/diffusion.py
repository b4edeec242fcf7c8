"""Drift and coefficient machinery for the wrapped-normal (WN) process.

Provides the constrained drift-matrix parametrization, the Langevin
construction, WN and von Mises drifts, and the 2x2 Ornstein-Uhlenbeck
helpers (closed-form matrix exponential and the covariance integral
``gamma_t``) used by the transition-density approximations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus import default_truncation, lattice, winding_weights, wrap

__all__ = [
    "WNParams",
    "build_drift_matrix",
    "stationary_cov",
    "langevin_drift",
    "wn_drift",
    "wn_drift_jacobian",
    "vm_drift",
    "mat_exp_2x2",
    "gamma_t",
]


@dataclass(frozen=True)
class WNParams:
    """Parameters (A, mu, Sigma) of the WN process.

    For p = 2, ``alpha`` is (alpha1, alpha2, alpha3) with alpha1,
    alpha2 > 0 and alpha3^2 < alpha1*alpha2 so that A^{-1} Sigma is a
    covariance matrix; ``sigma`` holds the diffusion standard deviations.
    For p = 1, ``alpha`` and ``sigma`` are single-element.
    """

    alpha: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if mu.shape[0] not in (1, 2):
            raise ValueError("mu must have 1 or 2 components")
        p = mu.shape[0]
        if sigma.shape[0] != p:
            raise ValueError("sigma must match the dimension of mu")
        if alpha.shape[0] != (1 if p == 1 else 3):
            raise ValueError("alpha must have 1 (p=1) or 3 (p=2) components")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(mu))
                and np.all(np.isfinite(sigma))):
            raise ValueError("WNParams entries must be finite")
        if np.any(sigma <= 0):
            raise ValueError("sigma components must be positive")
        if alpha[0] <= 0 or (p == 2 and alpha[1] <= 0):
            raise ValueError("alpha1 and alpha2 must be positive")
        if p == 2 and alpha[2] ** 2 >= alpha[0] * alpha[1]:
            raise ValueError("alpha3^2 must be smaller than alpha1*alpha2")
        for name, arr in (("alpha", alpha), ("mu", wrap(mu)), ("sigma", sigma)):
            arr = np.array(arr, dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    def drift_matrix(self) -> np.ndarray:
        return build_drift_matrix(self)

    def sigma_matrix(self) -> np.ndarray:
        """Constant diffusion matrix V = Sigma = diag(sigma^2)."""
        return np.diag(self.sigma**2)

    def stationary_covariance(self) -> np.ndarray:
        return stationary_cov(self.drift_matrix(), self.sigma_matrix())

    def truncation(self) -> int:
        return default_truncation(self.stationary_covariance())


def build_drift_matrix(params: WNParams) -> np.ndarray:
    """Drift matrix A = (a1, (s1/s2) a3; (s2/s1) a3, a2) for p = 2.

    The off-diagonal scaling keeps A^{-1} Sigma symmetric positive
    definite under the constraint a3^2 < a1*a2.  For p = 1 this is the
    1x1 matrix (alpha).
    """
    if params.p == 1:
        return np.array([[params.alpha[0]]])
    a1, a2, a3 = params.alpha
    s1, s2 = params.sigma
    return np.array([[a1, (s1 / s2) * a3], [(s2 / s1) * a3, a2]])


def stationary_cov(A, Sigma) -> np.ndarray:
    """Stationary covariance (1/2) A^{-1} Sigma of the OU-type process."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    det = np.linalg.det(A)
    if abs(det) < 1e-14:
        raise ValueError("drift matrix A is singular")
    S = 0.5 * np.linalg.solve(A, Sigma)
    S = 0.5 * (S + S.T)
    if np.any(np.linalg.eigvalsh(S) <= 0):
        raise ValueError("A^{-1} Sigma is not positive definite")
    return S


def langevin_drift(log_density_gradient, Sigma):
    """Drift b = (1/2) Sigma * grad log f for a constant-coefficient
    Langevin diffusion with stationary density f.

    ``log_density_gradient`` maps points (..., p) to gradients (..., p)
    and must be 2*pi-periodic.  Returns a callable drift field.
    """
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))

    def drift(theta):
        g = np.asarray(log_density_gradient(np.asarray(theta, dtype=float)))
        return 0.5 * g @ Sigma.T

    return drift


try:
    from . import _kernels

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a hard dependency in practice
    _HAVE_NUMBA = False


def _weight_moments(theta, params, trunc):
    """Mean and covariance of the winding offsets under w_k(theta).

    Returns (d, m1, covw): the wrapped deviation from mu, the weighted
    mean offset, and the weighted offset covariance, batched over theta's
    leading axes.
    """
    S = params.stationary_covariance()
    if trunc is None:
        trunc = default_truncation(S)
    theta = np.asarray(theta, dtype=float)
    d = wrap(theta - params.mu)
    offs = lattice(trunc, params.p)  # (L, p)
    if _HAVE_NUMBA and d.ndim == 2:
        m1 = np.empty_like(d)
        covw = np.empty(d.shape + (params.p,))
        _kernels.winding_moments(
            np.ascontiguousarray(d), np.linalg.inv(S), offs, m1, covw
        )
        return d, m1, covw
    w = winding_weights(d, np.zeros(params.p), S, trunc)  # (..., L)
    m1 = w @ offs  # (..., p)
    M2 = np.einsum("...l,li,lj->...ij", w, offs, offs)
    covw = M2 - m1[..., :, None] * m1[..., None, :]
    return d, m1, covw


def wn_drift(theta, params: WNParams, trunc=None):
    """WN process drift b(theta) = A (mu - theta - sum_k 2k*pi w_k(theta)).

    The winding weights are taken under the stationary covariance, which
    makes the drift 2*pi-periodic with a stable equilibrium at mu and an
    unstable one at the antipodes.  Batched over leading axes of theta.
    """
    d, m1, _ = _weight_moments(theta, params, trunc)
    A = params.drift_matrix()
    return -(d + m1) @ A.T


def wn_drift_jacobian(theta, params: WNParams, trunc=None):
    """Jacobian of :func:`wn_drift`: A (Cov_w(u) S^{-1} - I).

    ``Cov_w(u)`` is the covariance of the winding offsets under the
    weights at theta and S the stationary covariance.  Shape (..., p, p).
    """
    d, m1, covw = _weight_moments(theta, params, trunc)
    S = params.stationary_covariance()
    A = params.drift_matrix()
    eye = np.eye(params.p)
    return A @ (covw @ np.linalg.inv(S) - eye)


def vm_drift(theta, alpha, mu):
    """Von Mises process drift alpha * sin(mu - theta) on the circle."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return alpha * np.sin(mu - np.asarray(theta, dtype=float))


def _exp_coeffs(A, t):
    """Coefficients (a, b) with e^{tA} = a I + b A for a 2x2 matrix.

    Uses s = tr(A)/2 and q = sqrt(|det(A - sI)|).  Real-eigenvalue
    matrices take the cosh/sinh branch, complex pairs the cos/sin
    branch; q*t near zero falls back to the series limit and large
    |q*t| is evaluated through the eigenvalues to avoid overflow.
    """
    s = 0.5 * (A[..., 0, 0] + A[..., 1, 1])
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    disc = s * s - det  # = -det(A - sI)
    q = np.sqrt(np.abs(disc))
    qt = q * t
    x = np.where(disc >= 0, 1.0, -1.0)  # hyperbolic vs trigonometric

    # c0 = cosh/cos(qt), c1 = sinh(qt)/(qt) or sin(qt)/(qt)
    small = np.abs(qt) < 1e-6
    qt_safe = np.where(small, 1.0, qt)
    with np.errstate(over="ignore"):
        big = np.abs(qt) > 30.0  # only reachable on the hyperbolic branch
        c0 = np.where(x > 0, np.cosh(np.where(big, 0.0, qt)), np.cos(qt))
        c1 = np.where(
            x > 0,
            np.sinh(np.where(big, 0.0, qt_safe)) / qt_safe,
            np.sin(qt_safe) / qt_safe,
        )
    series = 1.0 + x * qt**2 / 6.0 * (1.0 + x * qt**2 / 20.0)
    c1 = np.where(small, series, c1)
    c0 = np.where(small, 1.0 + x * qt**2 / 2.0 * (1.0 + x * qt**2 / 12.0), c0)

    est = np.exp(np.where(big, 0.0, s * t))
    a = est * (c0 - s * t * c1)
    b = est * t * c1

    if np.any(big):
        # e^{st} cosh/sinh overflow; recombine through the eigenvalues.
        lp = np.exp((s + q) * t)
        lm = np.exp((s - q) * t)
        a_big = 0.5 * (lp + lm) - s * (lp - lm) / (2.0 * q)
        b_big = (lp - lm) / (2.0 * q)
        a = np.where(big, a_big, a)
        b = np.where(big, b_big, b)
    return a, b


def mat_exp_2x2(A, t):
    """Matrix exponential e^{tA} of a 2x2 matrix, closed form.

    Supports batched input of shape (..., 2, 2).
    """
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (2, 2):
        raise ValueError("mat_exp_2x2 expects a 2x2 matrix")
    a, b = _exp_coeffs(A, t)
    eye = np.eye(2)
    return a[..., None, None] * eye + b[..., None, None] * A


def _expm_ou(A, t):
    """e^{tA} for the 1x1 or 2x2 drift matrices used by the WN process."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape == (1, 1):
        return np.exp(t * A)
    return mat_exp_2x2(A, t)


def gamma_t(A, Sigma, t):
    """OU covariance integral Gamma_t = int_0^t e^{-sA} Sigma e^{-sA'} ds.

    Closed form for A with A^{-1} Sigma symmetric:
    Gamma_t = s(t) * (1/2) A^{-1} Sigma + i(t) * Sigma with
    s(t) = 1 - a(-2t) and i(t) = -b(-2t)/2, interpolating between the
    infinitesimal (t -> 0) and stationary (t -> inf) covariances.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    S = stationary_cov(A, Sigma)
    if A.shape == (1, 1):
        a = np.exp(-2.0 * t * A[0, 0])
        G = (1.0 - a) * S
    else:
        a, b = _exp_coeffs(A, -2.0 * t)
        G = (1.0 - a) * S + (-0.5 * b) * Sigma
    G = 0.5 * (G + G.T)
    return G
