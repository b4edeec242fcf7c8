"""Numba-compiled inner loops for simulation and likelihood sums."""

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi
LOG_TWO_PI = np.log(TWO_PI)


@njit(cache=True, inline="always")
def _quad(v, M, p):
    q = 0.0
    for i in range(p):
        for j in range(p):
            q += v[i] * M[i, j] * v[j]
    return q


@njit(cache=True)
def winding_moments(d, sinv, offs, m1, covw):
    """Softmax-weighted first/second central moments of winding offsets.

    ``d`` is (N, p) wrapped deviations from the mean, ``sinv`` the inverse
    stationary covariance.  Fills ``m1`` (N, p) with the weighted mean
    offset and ``covw`` (N, p, p) with the weighted covariance.
    """
    n, p = d.shape
    L = offs.shape[0]
    u = np.empty(p)
    g = np.empty(L)
    for r in range(n):
        gmax = -1e300
        for l in range(L):
            for i in range(p):
                u[i] = d[r, i] + offs[l, i]
            g[l] = -0.5 * _quad(u, sinv, p)
            if g[l] > gmax:
                gmax = g[l]
        wsum = 0.0
        for i in range(p):
            m1[r, i] = 0.0
            for j in range(p):
                covw[r, i, j] = 0.0
        for l in range(L):
            dd = g[l] - gmax
            if dd < -90.0:
                continue
            w = np.exp(dd)
            wsum += w
            for i in range(p):
                m1[r, i] += w * offs[l, i]
                for j in range(p):
                    covw[r, i, j] += w * offs[l, i] * offs[l, j]
        for i in range(p):
            m1[r, i] /= wsum
            for j in range(p):
                covw[r, i, j] /= wsum
        for i in range(p):
            for j in range(p):
                covw[r, i, j] -= m1[r, i] * m1[r, j]


@njit(cache=True)
def wn_logpdf_fixed(diffs, covinv, logdet, offs, out):
    """Wrapped-normal log-density of wrapped differences, common covariance.

    ``diffs`` is (N, p) with rows wrap(theta - mean); ``offs`` the winding
    lattice (L, p).  Writes the (N,) log densities into ``out``.
    """
    n, p = diffs.shape
    L = offs.shape[0]
    const = -0.5 * (p * LOG_TWO_PI + logdet)
    v = np.empty(p)
    q = np.empty(L)
    for r in range(n):
        qmin = 1e300
        for l in range(L):
            for i in range(p):
                v[i] = diffs[r, i] + offs[l, i]
            q[l] = _quad(v, covinv, p)
            if q[l] < qmin:
                qmin = q[l]
        s = 0.0
        for l in range(L):
            d = q[l] - qmin
            if d < 90.0:
                s += np.exp(-0.5 * d)
        out[r] = const - 0.5 * qmin + np.log(s)


@njit(cache=True)
def wn_logpdf_percov(diffs, covs, offs, out):
    """Like :func:`wn_logpdf_fixed` with one 2x2 covariance per row."""
    n, p = diffs.shape
    L = offs.shape[0]
    v = np.empty(p)
    q = np.empty(L)
    cinv = np.empty((2, 2))
    for r in range(n):
        a = covs[r, 0, 0]
        b = covs[r, 0, 1]
        c = covs[r, 1, 1]
        det = a * c - b * b
        cinv[0, 0] = c / det
        cinv[1, 1] = a / det
        cinv[0, 1] = -b / det
        cinv[1, 0] = -b / det
        qmin = 1e300
        for l in range(L):
            for i in range(p):
                v[i] = diffs[r, i] + offs[l, i]
            q[l] = _quad(v, cinv, p)
            if q[l] < qmin:
                qmin = q[l]
        s = 0.0
        for l in range(L):
            d = q[l] - qmin
            if d < 90.0:
                s += np.exp(-0.5 * d)
        out[r] = -LOG_TWO_PI - 0.5 * np.log(det) - 0.5 * qmin + np.log(s)


@njit(cache=True)
def wou_logpdf(dth, ds, E, ginv, logdetg, sinv, offs, out):
    """Log of the WOU mixture density for wrapped deviations from mu.

    ``dth`` (N, p) holds wrap(theta - mu), ``ds`` (N, p) wrap(theta_s - mu),
    ``E`` is e^{-tA}, ``ginv``/``logdetg`` describe Gamma_t and ``sinv``
    the stationary covariance driving the winding weights.
    """
    n, p = dth.shape
    L = offs.shape[0]
    const = -0.5 * (p * LOG_TWO_PI + logdetg)
    u = np.empty(p)
    v = np.empty(p)
    g = np.empty(L)
    terms = np.empty((L, L))
    vm = np.empty((L, p))
    for r in range(n):
        # normalized log winding weights of the start point
        gmax = -1e300
        for l in range(L):
            for i in range(p):
                u[i] = ds[r, i] + offs[l, i]
            g[l] = -0.5 * _quad(u, sinv, p)
            if g[l] > gmax:
                gmax = g[l]
        wsum = 0.0
        for l in range(L):
            d = g[l] - gmax
            if d > -90.0:
                wsum += np.exp(d)
        lognorm = gmax + np.log(wsum)
        # mixture terms over (winding m of start, winding k of density)
        tmax = -1e300
        for m in range(L):
            for i in range(p):
                acc = dth[r, i]
                for j in range(p):
                    acc -= E[i, j] * (ds[r, j] + offs[m, j])
                vm[m, i] = acc
        for m in range(L):
            lw = g[m] - lognorm
            for k in range(L):
                for i in range(p):
                    v[i] = vm[m, i] + offs[k, i]
                t = lw - 0.5 * _quad(v, ginv, p)
                terms[m, k] = t
                if t > tmax:
                    tmax = t
        s = 0.0
        for m in range(L):
            for k in range(L):
                d = terms[m, k] - tmax
                if d > -90.0:
                    s += np.exp(d)
        out[r] = const + tmax + np.log(s)


@njit(cache=True)
def euler_steps(theta0, A, mu, Sinv, sig, offs, h, normals, thin, out):
    """Fine-step Euler recursion for the WN process, thinned into ``out``.

    ``offs`` is the winding lattice ((L, p)), ``Sinv`` the inverse of the
    stationary covariance used by the drift weights, ``normals`` the
    pre-drawn standard normal increments, one row per internal step.
    """
    p = theta0.shape[0]
    L = offs.shape[0]
    th = theta0.copy()
    d = np.empty(p)
    m1 = np.empty(p)
    g = np.empty(L)
    for i in range(p):
        out[0, i] = th[i]
    sq = np.sqrt(h)
    row = 1
    for step in range(normals.shape[0]):
        for i in range(p):
            d[i] = ((th[i] - mu[i] + np.pi) % TWO_PI) - np.pi
        gmax = -1e300
        for l in range(L):
            q = 0.0
            for i in range(p):
                for j in range(p):
                    q += (d[i] + offs[l, i]) * Sinv[i, j] * (d[j] + offs[l, j])
            g[l] = -0.5 * q
            if g[l] > gmax:
                gmax = g[l]
        wsum = 0.0
        for i in range(p):
            m1[i] = 0.0
        for l in range(L):
            w = np.exp(g[l] - gmax)
            wsum += w
            for i in range(p):
                m1[i] += w * offs[l, i]
        for i in range(p):
            m1[i] /= wsum
        for i in range(p):
            b = 0.0
            for j in range(p):
                b += A[i, j] * (-(d[j] + m1[j]))
            th[i] = th[i] + b * h + sq * sig[i] * normals[step, i]
            th[i] = ((th[i] + np.pi) % TWO_PI) - np.pi
        if (step + 1) % thin == 0:
            for i in range(p):
                out[row, i] = th[i]
            row += 1
