"""Transition-density approximations and samplers for the WN process.

Three approximate transition densities over an elapsed time step:

* Euler: one-step Gaussian discretization, wrapped.
* Shoji-Ozaki: drift linearized at the start point, wrapped, with a
  documented fallback to Euler whenever the local drift Jacobian is not
  strictly stable (the linearization explodes there).
* WOU: mixture of wrapped OU transition kernels over the winding numbers
  of the start point, exact for the wrapped multivariate OU process.

Samplers: a fine-step Euler scheme with thinning, and the exact
two-stage WOU draw (winding number, then Gaussian).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .diffusion import (
    WNParams,
    _exp_coeffs,
    _expm_ou,
    gamma_t,
    wn_drift,
    wn_drift_jacobian,
)
from .torus import (
    _lattice_logpdfs,
    default_truncation,
    lattice,
    wn_log_density,
    wrap,
)

__all__ = [
    "TpdKind",
    "Trajectory",
    "euler_tpd",
    "shoji_ozaki_tpd",
    "wou_tpd",
    "so_moments",
    "simulate_euler",
    "sample_wou",
    "sample_stationary",
]

# Jacobian eigenvalues with real part above this trigger the SO fallback.
SO_STABILITY_EPS = -1e-8


class TpdKind(str, Enum):
    """The three transition-density approximations."""

    EULER = "euler"
    SHOJI_OZAKI = "so"
    WOU = "wou"

    @classmethod
    def parse(cls, name):
        if isinstance(name, TpdKind):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "euler": cls.EULER,
            "e": cls.EULER,
            "so": cls.SHOJI_OZAKI,
            "shoji_ozaki": cls.SHOJI_OZAKI,
            "shojiozaki": cls.SHOJI_OZAKI,
            "wou": cls.WOU,
        }
        if key not in aliases:
            raise ValueError(f"unknown tpd kind: {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class Trajectory:
    """Equally spaced observations on T^p with spacing ``delta``."""

    delta: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if pts.ndim != 2 or pts.shape[1] not in (1, 2):
            raise ValueError("points must be (N+1, p) with p in {1, 2}")
        if pts.shape[0] < 2:
            raise ValueError("a trajectory needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory points must be finite")
        pts = wrap(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n_transitions(self) -> int:
        return self.points.shape[0] - 1

    @property
    def p(self) -> int:
        return self.points.shape[1]

    @property
    def total_time(self) -> float:
        return self.delta * self.n_transitions


def _as_points(theta, p):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.ndim == 1:
        if theta.shape[0] != p:
            raise ValueError(f"expected a point with {p} components")
        return theta[None, :]
    return theta


try:
    from . import _kernels

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a hard dependency in practice
    _HAVE_NUMBA = False


def _logdet_inv(cov):
    cov = np.atleast_2d(cov)
    if cov.shape[0] == 1:
        return np.log(cov[0, 0]), np.array([[1.0 / cov[0, 0]]])
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    inv = (
        np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    )
    return np.log(det), inv


# ---------------------------------------------------------------------------
# Euler


def _euler_log_tpd(thetas, phis, params, delta, trunc):
    b = wn_drift(phis, params, trunc)
    means = phis + b * delta
    cov = params.sigma_matrix() * delta
    if _HAVE_NUMBA:
        logdet, inv = _logdet_inv(cov)
        diffs = wrap(thetas - means)
        out = np.empty(diffs.shape[0])
        _kernels.wn_logpdf_fixed(diffs, inv, logdet, lattice(trunc, params.p), out)
        return out
    return wn_log_density(thetas, means, cov, trunc)


def _step_truncation(params, delta):
    """Default lattice size covering both the stationary covariance (drift
    weights) and the one-step covariance V*delta (density)."""
    return max(
        params.truncation(), default_truncation(params.sigma_matrix() * delta)
    )


def euler_tpd(theta, phi, params: WNParams, delta, trunc=None):
    """Euler pseudo-tpd: WN density at mean phi + b(phi)*delta, cov V*delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if trunc is None:
        trunc = _step_truncation(params, delta)
    th = _as_points(theta, params.p)
    ph = _as_points(phi, params.p)
    return float(np.exp(_euler_log_tpd(th, ph, params, delta, trunc))[0])


# ---------------------------------------------------------------------------
# Shoji-Ozaki


def so_moments(b, J, V, delta):
    """Shoji-Ozaki moments from the drift value and Jacobian at the start.

    E = phi_offset + J^{-1} (e^{J d} - I) b   (returned as the offset only)
    V_d = (1/2) J^{-1} (e^{2 J d} - I) V

    Parameters are batched: ``b`` is (N, p), ``J`` is (N, p, p), ``V`` is
    the constant (p, p) diffusion matrix.  Returns (mean_offsets (N, p),
    covs (N, p, p), stable (N,) bool) where ``stable`` is False wherever
    the Jacobian has an eigenvalue with real part above ``-1e-8`` or the
    resulting covariance is not positive definite; those transitions must
    fall back to the Euler tpd.
    """
    b = np.asarray(b, dtype=float)
    J = np.asarray(J, dtype=float)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    p = b.shape[-1]
    if p == 1:
        j = J[..., 0, 0]
        stable = j <= SO_STABILITY_EPS
        jsafe = np.where(stable, j, -1.0)
        e1 = np.expm1(jsafe * delta)
        e2 = np.expm1(2.0 * jsafe * delta)
        mean_off = (e1 / jsafe) * b[..., 0]
        var = (e2 / (2.0 * jsafe)) * V[0, 0]
        stable = stable & (var > 0)
        return mean_off[..., None], var[..., None, None], stable

    s = 0.5 * (J[..., 0, 0] + J[..., 1, 1])
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    disc = s * s - det
    lam_max = np.where(disc >= 0, s + np.sqrt(np.abs(disc)), s)
    stable = (lam_max <= SO_STABILITY_EPS) & (np.abs(det) > 1e-300)

    # J^{-1} (e^{J t} - I) = (a(t) - 1) J^{-1} + b(t) I, batched closed form
    Jsafe = np.where(stable[..., None, None], J, -np.eye(2))
    det_safe = np.where(stable, det, 1.0)
    inv = np.empty_like(Jsafe)
    inv[..., 0, 0] = Jsafe[..., 1, 1]
    inv[..., 1, 1] = Jsafe[..., 0, 0]
    inv[..., 0, 1] = -Jsafe[..., 0, 1]
    inv[..., 1, 0] = -Jsafe[..., 1, 0]
    inv = inv / det_safe[..., None, None]

    a1, b1 = _exp_coeffs(Jsafe, delta)
    phi1 = (a1[..., None, None] - 1.0) * inv + b1[..., None, None] * np.eye(2)
    mean_off = np.einsum("...ij,...j->...i", phi1, b)

    a2, b2 = _exp_coeffs(Jsafe, 2.0 * delta)
    phi2 = (a2[..., None, None] - 1.0) * inv + b2[..., None, None] * np.eye(2)
    covs = 0.5 * phi2 @ V
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    pd = (covs[..., 0, 0] > 0) & (
        covs[..., 0, 0] * covs[..., 1, 1] - covs[..., 0, 1] ** 2 > 0
    )
    stable = stable & pd
    return mean_off, covs, stable


def _so_log_tpd(thetas, phis, params, delta, trunc):
    b = wn_drift(phis, params, trunc)
    J = wn_drift_jacobian(phis, params, trunc)
    V = params.sigma_matrix()
    mean_off, covs, stable = so_moments(b, J, V, delta)
    covs = np.where(stable[..., None, None], covs, np.eye(params.p) * delta)
    if _HAVE_NUMBA and params.p == 2:
        diffs = wrap(thetas - (phis + mean_off))
        log_so = np.empty(diffs.shape[0])
        _kernels.wn_logpdf_percov(diffs, covs, lattice(trunc, 2), log_so)
    else:
        log_so = wn_log_density(thetas, phis + mean_off, covs, trunc)
    log_e = _euler_log_tpd(thetas, phis, params, delta, trunc)
    return np.where(stable, log_so, log_e)


def shoji_ozaki_tpd(theta, phi, params: WNParams, delta, trunc=None):
    """Shoji-Ozaki pseudo-tpd with Euler fallback at unstable points."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if trunc is None:
        trunc = _step_truncation(params, delta)
    th = _as_points(theta, params.p)
    ph = _as_points(phi, params.p)
    return float(np.exp(_so_log_tpd(th, ph, params, delta, trunc))[0])


# ---------------------------------------------------------------------------
# WOU


def _wou_components(theta_s, params, t, trunc):
    """Mixture pieces of the WOU tpd given start points (N, p).

    Returns (means (N, L, p), log_weights (N, L), Gamma (p, p)).
    """
    S = params.stationary_covariance()
    A = params.drift_matrix()
    E = _expm_ou(A, -t)
    G = gamma_t(A, params.sigma_matrix(), t)
    d_s = wrap(theta_s - params.mu)
    logs = _lattice_logpdfs(d_s, np.zeros(params.p), S, trunc)  # (N, L)
    m = np.max(logs, axis=-1, keepdims=True)
    logw = logs - (m + np.log(np.sum(np.exp(logs - m), axis=-1, keepdims=True)))
    offs = lattice(trunc, params.p)
    means = params.mu + (d_s[..., None, :] + offs) @ E.T
    return means, logw, G


def _wou_log_tpd_np(thetas, theta_ss, params, t, trunc):
    means, logw, G = _wou_components(theta_ss, params, t, trunc)
    logf = wn_log_density(thetas[..., None, :], means, G, trunc)  # (N, L)
    tot = logf + logw
    m = np.max(tot, axis=-1)
    return m + np.log(np.sum(np.exp(tot - m[..., None]), axis=-1))


def _wou_log_tpd(thetas, theta_ss, params, t, trunc):
    if not _HAVE_NUMBA:
        return _wou_log_tpd_np(thetas, theta_ss, params, t, trunc)
    A = params.drift_matrix()
    S = params.stationary_covariance()
    G = gamma_t(A, params.sigma_matrix(), t)
    logdetg, ginv = _logdet_inv(G)
    _, sinv = _logdet_inv(S)
    E = _expm_ou(A, -t)
    dth = np.ascontiguousarray(wrap(thetas - params.mu))
    ds = np.ascontiguousarray(np.broadcast_to(wrap(theta_ss - params.mu), dth.shape))
    out = np.empty(dth.shape[0])
    _kernels.wou_logpdf(dth, ds, E, ginv, logdetg, sinv, lattice(trunc, params.p), out)
    return out


def wou_tpd(theta, theta_s, params: WNParams, t, trunc=None):
    """WOU tpd: winding-weighted mixture of wrapped OU transition kernels."""
    if t <= 0:
        raise ValueError("t must be positive")
    if trunc is None:
        trunc = params.truncation()
    th = _as_points(theta, params.p)
    ts = _as_points(theta_s, params.p)
    return float(np.exp(_wou_log_tpd(th, ts, params, t, trunc))[0])


# ---------------------------------------------------------------------------
# Samplers


def _euler_steps_py(theta0, A, mu, Sinv, sig, offs, h, normals, thin, out):
    th = theta0.copy()
    out[0] = th
    sq = np.sqrt(h)
    row = 1
    for step in range(normals.shape[0]):
        d = wrap(th - mu)
        g = -0.5 * np.sum((d + offs) @ Sinv * (d + offs), axis=1)
        w = np.exp(g - g.max())
        w /= w.sum()
        b = A @ (-(d + w @ offs))
        th = wrap(th + b * h + sq * sig * normals[step])
        if (step + 1) % thin == 0:
            out[row] = th
            row += 1


def simulate_euler(
    params: WNParams,
    theta0,
    delta,
    n,
    refine_m=10,
    seed=None,
    trunc=None,
):
    """Simulate the WN process by fine-step Euler with thinning.

    Internally steps at ``delta / refine_m`` and keeps every
    ``refine_m``-th point, reducing the discretization bias of the
    one-step scheme.  Deterministic given ``seed`` (PCG64 generator,
    ``numpy.random.default_rng``).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if refine_m < 1:
        raise ValueError("refine_m must be at least 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    if trunc is None:
        trunc = params.truncation()
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta0.shape != (params.p,):
        raise ValueError("theta0 must match the process dimension")
    rng = np.random.default_rng(seed)
    h = delta / refine_m
    normals = rng.standard_normal((n * refine_m, params.p))
    out = np.empty((n + 1, params.p))
    S = params.stationary_covariance()
    Sinv = np.linalg.inv(S)
    offs = lattice(trunc, params.p)
    args = (
        wrap(theta0),
        params.drift_matrix(),
        params.mu.copy(),
        Sinv,
        params.sigma.copy(),
        offs,
        h,
        normals,
        refine_m,
        out,
    )
    if _HAVE_NUMBA:
        _kernels.euler_steps(*args)
    else:
        _euler_steps_py(*args)
    return Trajectory(delta=delta, points=out)


def _chol(cov):
    return np.linalg.cholesky(np.atleast_2d(cov))


def sample_wou(theta_s, params: WNParams, t, trunc=None, seed=None, rng=None,
               size=None):
    """Exact draws from the WOU mixture: pick a winding number from its
    stationary weights, then sample the matching Gaussian and wrap.

    Returns a single point of shape (p,) when ``size`` is None, else an
    array of shape (size, p).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if trunc is None:
        trunc = params.truncation()
    if rng is None:
        rng = np.random.default_rng(seed)
    ts = _as_points(theta_s, params.p)
    means, logw, G = _wou_components(ts, params, t, trunc)
    w = np.exp(logw[0])
    w /= w.sum()
    n = 1 if size is None else int(size)
    m = rng.choice(w.shape[0], p=w, size=n)
    z = rng.standard_normal((n, params.p))
    draws = wrap(means[0, m] + z @ _chol(G).T)
    return draws[0] if size is None else draws


def sample_stationary(params: WNParams, n=1, seed=None, rng=None):
    """Draws from the stationary WN(mu, (1/2) A^{-1} Sigma) distribution."""
    if rng is None:
        rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, params.p))
    return wrap(params.mu + z @ _chol(params.stationary_covariance()).T)
