"""Approximate maximum-likelihood estimation for the WN process.

The likelihood replaces the intractable transition density with one of
the three approximations; optimization runs over an unconstrained
reparametrization so the fitted parameters always satisfy the drift
constraints.  Starting values come from stationary moment matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .diffusion import WNParams
from .exceptions import NumericError
from .torus import wn_log_density, wrap
from .tpd import (
    TpdKind,
    Trajectory,
    _euler_log_tpd,
    _so_log_tpd,
    _step_truncation,
    _wou_log_tpd,
)

__all__ = ["FitConfig", "FitResult", "loglik", "stationary_init", "fit_mle"]

ALPHA_CAP = 1e3

_LOG_KERNELS = {
    TpdKind.EULER: _euler_log_tpd,
    TpdKind.SHOJI_OZAKI: _so_log_tpd,
    TpdKind.WOU: _wou_log_tpd,
}


@dataclass(frozen=True)
class FitConfig:
    """Configuration of one approximate-likelihood fit.

    ``fix_sigma`` holds known diffusion standard deviations (the usual
    setting for the benchmark, where A and Sigma are unidentifiable at
    large observation spacings); when None, sigma is estimated too.
    """

    kind: TpdKind = TpdKind.WOU
    include_stationary_start: bool = True
    fix_sigma: tuple | None = None
    ftol: float = 1e-8
    max_evals: int = 10_000
    trunc: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TpdKind.parse(self.kind))
        if self.ftol <= 0 or self.max_evals <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class FitResult:
    params: WNParams
    loglik: float
    converged: bool
    evaluations: int


def loglik(traj: Trajectory, params: WNParams, cfg: FitConfig) -> float:
    """Approximate log-likelihood of a discretized trajectory.

    Sum of log approximate transition densities over consecutive pairs,
    plus the log stationary WN density of the first point when
    ``cfg.include_stationary_start`` is set.
    """
    if traj.p != params.p:
        raise ValueError("trajectory and parameters disagree on dimension")
    trunc = cfg.trunc if cfg.trunc is not None else _step_truncation(params, traj.delta)
    kernel = _LOG_KERNELS[cfg.kind]
    terms = kernel(traj.points[1:], traj.points[:-1], params, traj.delta, trunc)
    bad = ~np.isfinite(terms)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise NumericError(f"non-finite transition density at transition {idx}")
    total = float(np.sum(terms))
    if cfg.include_stationary_start:
        start = float(
            wn_log_density(
                traj.points[0], params.mu, params.stationary_covariance(), trunc
            )
        )
        if not np.isfinite(start):
            raise NumericError("non-finite stationary density at the first point")
        total += start
    return total


def stationary_init(traj: Trajectory, fix_sigma=None) -> WNParams:
    """Moment-matching starting values from the stationary regime.

    Circular means give mu; the mean resultant length per component gives
    the stationary variance via wrapped-normal moment matching
    (sigma_stat^2 = -2 log R); sigma comes from realized quadratic
    variation unless fixed; alpha follows from sigma^2 / (2 sigma_stat^2),
    capped at 1e3; the cross-drift starts at zero.
    """
    pts = traj.points
    if pts.shape[0] < 11:
        raise ValueError("stationary_init needs at least 10 transitions")
    z = np.exp(1j * pts)
    zbar = z.mean(axis=0)
    rbar = np.abs(zbar)
    # resultant length ~ n^{-1/2} for uniform data; below 0.05 the implied
    # stationary spread exceeds the circle and alpha is unidentifiable
    if np.any(rbar < 0.05):
        raise NumericError(
            "initialization degenerate: data nearly uniform on the circle; "
            "supply a manual start"
        )
    mu = wrap(np.angle(zbar))
    var_stat = -2.0 * np.log(np.minimum(rbar, 1.0))
    if fix_sigma is not None:
        sigma = np.atleast_1d(np.asarray(fix_sigma, dtype=float))
    else:
        incr = wrap(np.diff(pts, axis=0))
        qv = np.sum(incr**2, axis=0) / (traj.n_transitions * traj.delta)
        sigma = np.sqrt(np.maximum(qv, 1e-12))
    with np.errstate(divide="ignore"):
        alpha_diag = np.where(
            var_stat > 0, sigma**2 / (2.0 * var_stat), np.inf
        )
    alpha_diag = np.minimum(alpha_diag, ALPHA_CAP)
    if traj.p == 1:
        return WNParams(alpha=alpha_diag, mu=mu, sigma=sigma)
    return WNParams(
        alpha=[alpha_diag[0], alpha_diag[1], 0.0], mu=mu, sigma=sigma
    )


# --- unconstrained reparametrization ---------------------------------------
# p=2: x = (log a1, log a2, eta, mu1, mu2 [, log s1, log s2])
#      with a3 = tanh(eta) * sqrt(a1 a2), which keeps a3^2 < a1 a2.
# p=1: x = (log a, mu [, log s]).

_CLIP = 12.0


def _pack(params: WNParams, fit_sigma: bool):
    if params.p == 1:
        x = [np.log(params.alpha[0]), params.mu[0]]
    else:
        a1, a2, a3 = params.alpha
        eta = np.arctanh(np.clip(a3 / np.sqrt(a1 * a2), -0.999999, 0.999999))
        x = [np.log(a1), np.log(a2), eta, params.mu[0], params.mu[1]]
    if fit_sigma:
        x.extend(np.log(params.sigma))
    return np.array(x, dtype=float)


def _unpack(x, p, sigma_fixed):
    if p == 1:
        a = np.exp(np.clip(x[0], -_CLIP, _CLIP))
        mu = wrap(x[1:2])
        sigma = (
            sigma_fixed
            if sigma_fixed is not None
            else np.exp(np.clip(x[2:3], -_CLIP, _CLIP))
        )
        return WNParams(alpha=[a], mu=mu, sigma=sigma)
    a1 = np.exp(np.clip(x[0], -_CLIP, _CLIP))
    a2 = np.exp(np.clip(x[1], -_CLIP, _CLIP))
    a3 = np.tanh(np.clip(x[2], -8.0, 8.0)) * np.sqrt(a1 * a2)
    mu = wrap(x[3:5])
    sigma = (
        sigma_fixed
        if sigma_fixed is not None
        else np.exp(np.clip(x[5:7], -_CLIP, _CLIP))
    )
    return WNParams(alpha=[a1, a2, a3], mu=mu, sigma=sigma)


def fit_mle(traj: Trajectory, cfg: FitConfig, init: WNParams | None = None) -> FitResult:
    """Maximize the approximate log-likelihood by Nelder-Mead simplex.

    Runs in the unconstrained reparametrization starting from
    ``stationary_init`` (or a supplied start).  Deterministic: the same
    trajectory and configuration always produce the same result.
    """
    sigma_fixed = (
        np.atleast_1d(np.asarray(cfg.fix_sigma, dtype=float))
        if cfg.fix_sigma is not None
        else None
    )
    if init is None:
        init = stationary_init(traj, fix_sigma=cfg.fix_sigma)
    x0 = _pack(init, fit_sigma=sigma_fixed is None)

    def objective(x):
        try:
            params = _unpack(x, traj.p, sigma_fixed)
            return -loglik(traj, params, cfg)
        except (NumericError, ValueError, FloatingPointError):
            return np.inf

    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={
            "fatol": cfg.ftol,
            "xatol": 1e-6,
            "maxfev": cfg.max_evals,
            "maxiter": cfg.max_evals,
        },
    )
    if not np.isfinite(res.fun):
        raise NumericError("fit failed: no finite likelihood value found")
    params = _unpack(res.x, traj.p, sigma_fixed)
    return FitResult(
        params=params,
        loglik=-float(res.fun),
        converged=bool(res.success),
        evaluations=int(res.nfev),
    )
