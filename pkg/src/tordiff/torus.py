"""Angular primitives shared by every other module.

Angles live on the torus T^p (p = 1 or 2), each component in [-pi, pi)
with the endpoints identified.  All series over winding numbers are
truncated to the lattice {-K..K}^p; ``K`` is always an explicit argument
(``default_truncation`` picks a sane value from the covariance scale).
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi

__all__ = [
    "wrap",
    "angular_distance",
    "lattice",
    "default_truncation",
    "wn_density",
    "wn_log_density",
    "winding_weights",
]


def wrap(x):
    """Reduce angles to principal values via ``((x + pi) mod 2pi) - pi``.

    Accepts scalars or arrays; the result has components in [-pi, pi)
    (``pi`` maps to ``-pi``).  Idempotent.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("wrap: input angles must be finite")
    return np.mod(x + np.pi, TWO_PI) - np.pi


def angular_distance(a, b):
    """Shortest-arc distance: Euclidean norm of the wrapped difference.

    ``a`` and ``b`` broadcast over leading axes; the trailing axis is the
    torus dimension.  Scalars are treated as p = 1 points.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 0 and b.ndim == 0:
        return float(np.abs(wrap(a - b)))
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"angular_distance: dimension mismatch {a.shape[-1]} vs {b.shape[-1]}"
        )
    d = wrap(a - b)
    return np.sqrt(np.sum(d * d, axis=-1))


def lattice(trunc, p):
    """Winding offsets 2*pi*k for k in {-K..K}^p, shape ((2K+1)^p, p).

    Ordering is row-major in k (k1 slow, k2 fast), so index
    ``(K + k1) * (2K+1) + (K + k2)`` holds offset ``2*pi*(k1, k2)``.
    """
    trunc = int(trunc)
    if trunc < 1:
        raise ValueError("truncation K must be >= 1")
    if p not in (1, 2):
        raise ValueError("torus dimension p must be 1 or 2")
    ks = np.arange(-trunc, trunc + 1, dtype=float)
    if p == 1:
        return TWO_PI * ks[:, None]
    k1, k2 = np.meshgrid(ks, ks, indexing="ij")
    return TWO_PI * np.stack([k1.ravel(), k2.ravel()], axis=-1)


def default_truncation(cov):
    """K = 2 while every marginal std dev is <= 2, else K = 4, growing
    further only for extreme variances so the lattice keeps covering
    about 3.5 standard deviations.

    Tail mass of the discarded winding terms is below 1e-12 for the
    K = 2 regime.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    smax = float(np.max(np.sqrt(np.diag(cov))))
    if smax <= 2.0:
        return 2
    return max(4, int(np.ceil(3.5 * smax / TWO_PI)))


def _validate_spd(cov, p):
    cov = np.asarray(cov, dtype=float)
    if cov.shape[-2:] != (p, p):
        raise ValueError(f"covariance must be {p}x{p}, got {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance entries must be finite")
    if p == 1:
        if np.any(cov[..., 0, 0] <= 0):
            raise ValueError("covariance must be positive definite")
        return cov
    if not np.allclose(cov[..., 0, 1], cov[..., 1, 0], atol=1e-10):
        raise ValueError("covariance must be symmetric")
    det = cov[..., 0, 0] * cov[..., 1, 1] - cov[..., 0, 1] * cov[..., 1, 0]
    if np.any(cov[..., 0, 0] <= 0) or np.any(det <= 0):
        raise ValueError("covariance must be positive definite")
    return cov


def _gauss_logpdf(diff, cov):
    """Centered Gaussian log-density.

    ``diff`` has shape (..., L, p) (L = lattice points), ``cov`` is (p, p)
    or broadcasts to (..., 1, p, p) for per-row covariances.
    """
    p = diff.shape[-1]
    if p == 1:
        var = cov[..., 0, 0]
        q = diff[..., 0] ** 2 / var
        lognorm = -0.5 * (np.log(TWO_PI) + np.log(var))
    else:
        a = cov[..., 0, 0]
        b = cov[..., 0, 1]
        c = cov[..., 1, 1]
        det = a * c - b * b
        dx = diff[..., 0]
        dy = diff[..., 1]
        q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
        lognorm = -np.log(TWO_PI) - 0.5 * np.log(det)
    return lognorm - 0.5 * q


def _lattice_logpdfs(theta, mu, cov, trunc):
    """Per-winding Gaussian log-densities at wrap(theta - mu) + 2*pi*k.

    Returns an array of shape (..., L).  ``cov`` may be a single (p, p)
    matrix or batched with shape broadcastable to theta's leading axes.
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    p = theta.shape[-1]
    cov = _validate_spd(cov, p)
    offs = lattice(trunc, p)  # (L, p)
    d = wrap(theta - mu)[..., None, :] + offs  # (..., L, p)
    if cov.ndim > 2:
        cov = cov[..., None, :, :]
    return _gauss_logpdf(d, cov)


def wn_log_density(theta, mu, cov, trunc=None):
    """Log of the wrapped-normal density on T^p.

    The density is the sum of Gaussian densities over the winding lattice,
    evaluated here as a log-sum-exp over {-K..K}^p.  ``theta`` and ``mu``
    broadcast over leading axes; the last axis is the torus dimension.
    """
    if trunc is None:
        trunc = default_truncation(cov)
    logs = _lattice_logpdfs(theta, mu, cov, trunc)
    m = np.max(logs, axis=-1)
    return m + np.log(np.sum(np.exp(logs - m[..., None]), axis=-1))


def wn_density(theta, mu, cov, trunc=None):
    """Wrapped-normal density: sum of N(mu + 2k*pi, cov) terms over k."""
    return np.exp(wn_log_density(theta, mu, cov, trunc))


def winding_weights(theta, mu, cov, trunc=None):
    """Normalized winding-number probabilities w_k(theta), shape (..., L).

    Entry order follows :func:`lattice`.  Each row sums to one exactly
    (softmax normalization over the truncated lattice).
    """
    if trunc is None:
        trunc = default_truncation(cov)
    logs = _lattice_logpdfs(theta, mu, cov, trunc)
    logs = logs - np.max(logs, axis=-1, keepdims=True)
    w = np.exp(logs)
    return w / np.sum(w, axis=-1, keepdims=True)
