"""Fokker-Planck ground truth and the KL benchmark of the tpd approximations.

The forward PDE is solved by method-of-lines on a uniform periodic grid:
second-order central differences for both advection and diffusion and
Crank-Nicolson time stepping.  The discrete generator has zero column
sums, so total mass is conserved to solver precision; tiny advection
undershoots are clipped at output slices and accounted.

The benchmark compares the PDE solution (started from a WN(theta_s,
sigma0^2 I) blob) against the sigma0-smoothed approximations

    p^A(theta | theta_s) smoothed over phi ~ WN(theta_s, sigma0^2 I),

computed here in Fourier space: every approximation is a finite mixture
of wrapped Gaussians, whose torus Fourier coefficients are known in
closed form, so the smoothed density is synthesized exactly up to
aliasing.  Divergences are stationary-weighted averages over start
points of grid KL integrals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse
from scipy.sparse.linalg import splu

from .diffusion import WNParams, _expm_ou, gamma_t, wn_drift, wn_drift_jacobian
from .exceptions import ConfigError
from .torus import TWO_PI, lattice, wn_density, wrap
from .tpd import TpdKind, so_moments

__all__ = [
    "FpeConfig",
    "GridDensity",
    "grid_centers",
    "solve_fpe",
    "smoothed_tpd",
    "kl_divergence",
    "kl_curves",
]

DENSITY_FLOOR = 1e-30
CLIP_MASS_TOL = 1e-6


@dataclass(frozen=True)
class FpeConfig:
    """Grid and time-stepping configuration of the PDE oracle."""

    mx: int = 240
    my: int = 240
    mt_per_unit: int = 1500
    sigma0: float = 0.1

    def __post_init__(self):
        if self.mx < 16 or self.my < 16:
            raise ConfigError("grid sizes must be at least 16")
        if self.mt_per_unit < 100:
            raise ConfigError("mt_per_unit must be at least 100")
        if self.sigma0 <= 0:
            raise ConfigError("sigma0 must be positive")


@dataclass(frozen=True)
class GridDensity:
    """Density values at cell centers of a uniform periodic partition."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim not in (1, 2):
            raise ValueError("values must be 1- or 2-dimensional")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def p(self) -> int:
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    def cell_measure(self) -> float:
        out = 1.0
        for m in self.values.shape:
            out *= TWO_PI / m
        return out

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_measure())

    def normalized(self) -> "GridDensity":
        vals = np.clip(self.values, 0.0, None)
        return GridDensity(vals / (vals.sum() * self.cell_measure()))


def grid_centers(m: int) -> np.ndarray:
    h = TWO_PI / m
    return -np.pi + (np.arange(m) + 0.5) * h


def _grid_points(cfg: FpeConfig, p: int) -> np.ndarray:
    if p == 1:
        return grid_centers(cfg.mx)[:, None]
    gx, gy = np.meshgrid(
        grid_centers(cfg.mx), grid_centers(cfg.my), indexing="ij"
    )
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def _shift_matrix(m: int, k: int) -> sparse.csr_matrix:
    """Periodic shift: (S_k f)_i = f_{i+k}."""
    wrap_k = k - m if k > 0 else k + m
    return sparse.eye(m, format="csr", k=k) + sparse.eye(m, format="csr", k=wrap_k)


def _build_generator(params: WNParams, cfg: FpeConfig) -> sparse.csc_matrix:
    """Discrete forward generator L with zero column sums.

    L = -D_x(b1 .) - D_y(b2 .) + (1/2)(s1^2 D_xx + s2^2 D_yy), centered
    differences, periodic wrap-around.
    """
    p = params.p
    pts = _grid_points(cfg, p)
    drift = wn_drift(pts, params)
    sig2 = params.sigma**2
    if p == 1:
        m = cfg.mx
        h = TWO_PI / m
        sp = _shift_matrix(m, 1)
        sm = _shift_matrix(m, -1)
        adv = -(sp @ sparse.diags(drift[:, 0]) - sm @ sparse.diags(drift[:, 0])) / (2 * h)
        diff = 0.5 * sig2[0] * (sp + sm - 2 * sparse.eye(m)) / h**2
        return (adv + diff).tocsc()
    mx, my = cfg.mx, cfg.my
    hx, hy = TWO_PI / mx, TWO_PI / my
    ix = sparse.eye(mx, format="csr")
    iy = sparse.eye(my, format="csr")
    spx = sparse.kron(_shift_matrix(mx, 1), iy, format="csr")
    smx = sparse.kron(_shift_matrix(mx, -1), iy, format="csr")
    spy = sparse.kron(ix, _shift_matrix(my, 1), format="csr")
    smy = sparse.kron(ix, _shift_matrix(my, -1), format="csr")
    b1 = sparse.diags(drift[:, 0])
    b2 = sparse.diags(drift[:, 1])
    adv = -((spx - smx) @ b1) / (2 * hx) - ((spy - smy) @ b2) / (2 * hy)
    n = mx * my
    diff = (
        0.5 * sig2[0] * (spx + smx - 2 * sparse.eye(n)) / hx**2
        + 0.5 * sig2[1] * (spy + smy - 2 * sparse.eye(n)) / hy**2
    )
    return (adv + diff).tocsc()


def _initial_blob(params, theta_s, cfg):
    theta_s = np.atleast_1d(np.asarray(theta_s, dtype=float))
    p = params.p
    pts = _grid_points(cfg, p)
    vals = wn_density(pts, theta_s, np.eye(p) * cfg.sigma0**2)
    cell = (TWO_PI / cfg.mx) if p == 1 else (TWO_PI / cfg.mx) * (TWO_PI / cfg.my)
    return vals / (vals.sum() * cell)


def _fpe_slices(params: WNParams, theta_s, ts, cfg: FpeConfig,
                initial_vec=None):
    """Integrate the PDE once, returning GridDensity slices at ``ts``.

    ``ts`` must be positive; slices are returned in the order given.
    Each segment between consecutive sorted times runs ceil(dt_seg *
    mt_per_unit) Crank-Nicolson steps.
    """
    ts = list(ts)
    if any(t <= 0 for t in ts):
        raise ConfigError("slice times must be positive")
    order = np.argsort(ts)
    L = _build_generator(params, cfg)
    if initial_vec is None:
        vec = _initial_blob(params, theta_s, cfg)
    else:
        vec = np.asarray(initial_vec, dtype=float).ravel().copy()
        if vec.size != L.shape[0]:
            raise ConfigError("initial grid does not match the configuration")
    cell = (TWO_PI / cfg.mx) * (1.0 if params.p == 1 else TWO_PI / cfg.my)
    eye = sparse.eye(L.shape[0], format="csc")
    out = [None] * len(ts)
    t_now = 0.0
    lu_cache = {}
    for idx in order:
        t_target = ts[idx]
        seg = t_target - t_now
        if seg > 1e-12:
            n_steps = int(np.ceil(seg * cfg.mt_per_unit))
            dt = seg / n_steps
            key = round(dt, 15)
            if key not in lu_cache:
                lu_cache[key] = (
                    splu((eye - 0.5 * dt * L).tocsc()),
                    (eye + 0.5 * dt * L).tocsr(),
                )
            lu, plus = lu_cache[key]
            for _ in range(n_steps):
                vec = lu.solve(plus @ vec)
            t_now = t_target
        mass = vec.sum() * cell
        if not np.isfinite(mass) or abs(mass - 1.0) > CLIP_MASS_TOL:
            raise ConfigError(
                f"mass drifted to {mass!r} at t={t_target}; "
                f"increase mt_per_unit (try {2 * cfg.mt_per_unit})"
            )
        clipped = -vec[vec < 0].sum() * cell
        if clipped > CLIP_MASS_TOL:
            raise ConfigError(
                f"advection undershoot clipped {clipped:.2e} mass at "
                f"t={t_target}; increase mt_per_unit (try {2 * cfg.mt_per_unit})"
            )
        slice_vals = np.clip(vec, 0.0, None)
        slice_vals = slice_vals / (slice_vals.sum() * cell)
        if params.p == 2:
            slice_vals = slice_vals.reshape(cfg.mx, cfg.my)
        out[idx] = GridDensity(slice_vals)
    return out


def solve_fpe(params: WNParams, theta_s, t, cfg: FpeConfig,
              initial: GridDensity | None = None) -> GridDensity:
    """Numerical transition density started from a WN(theta_s, sigma0^2 I)
    blob, evolved to time ``t`` on the periodic grid.

    ``initial`` overrides the default blob (values on the same grid) for
    fixed-point checks.
    """
    init_vec = initial.values if isinstance(initial, GridDensity) else initial
    return _fpe_slices(params, theta_s, [t], cfg, initial_vec=init_vec)[0]


# ---------------------------------------------------------------------------
# Smoothed approximations via Fourier synthesis


def _phi_quadrature(theta_s, sigma0, cfg, p):
    """Quadrature nodes and weights for the smoothing integral over phi.

    Tensor grid around theta_s with spacing min(grid step, sigma0/3) and
    half-width 5*sigma0; weights follow the WN(theta_s, sigma0^2 I)
    density, normalized to sum to one.
    """
    h_grid = TWO_PI / min(cfg.mx, cfg.my if p == 2 else cfg.mx)
    spacing = min(h_grid, sigma0 / 3.0)
    half = min(5.0 * sigma0, np.pi)
    n_side = max(int(np.ceil(half / spacing)), 1)
    axis = np.arange(-n_side, n_side + 1) * spacing
    if p == 1:
        phis = theta_s + axis[:, None]
    else:
        ax, ay = np.meshgrid(axis, axis, indexing="ij")
        phis = theta_s + np.stack([ax.ravel(), ay.ravel()], axis=-1)
    w = np.exp(-0.5 * np.sum((phis - theta_s) ** 2, axis=-1) / sigma0**2)
    return wrap(phis), w / w.sum()


def _tpd_mixture(kind, params, phis, weights, t, trunc):
    """Represent p^A_t(. | phi), phi-averaged, as a wrapped-Gaussian mixture.

    Returns (weights (J,), means (J, p), covs): ``covs`` is a single
    (p, p) matrix shared by all components (Euler, WOU) or a (J, p, p)
    stack (Shoji-Ozaki).
    """
    kind = TpdKind.parse(kind)
    p = params.p
    if kind == TpdKind.EULER:
        means = phis + wn_drift(phis, params, trunc) * t
        return weights, means, params.sigma_matrix() * t

    if kind == TpdKind.SHOJI_OZAKI:
        b = wn_drift(phis, params, trunc)
        J = wn_drift_jacobian(phis, params, trunc)
        V = params.sigma_matrix()
        mean_off, covs, stable = so_moments(b, J, V, t)
        means = np.where(stable[..., None], phis + mean_off, phis + b * t)
        covs = np.where(stable[..., None, None], covs, V * t)
        return weights, means, covs

    # WOU: per phi, mix over the winding lattice with common Gamma_t
    A = params.drift_matrix()
    E = _expm_ou(A, -t)
    G = gamma_t(A, params.sigma_matrix(), t)
    S = params.stationary_covariance()
    offs = lattice(trunc, p)
    d = wrap(phis - params.mu)[:, None, :] + offs  # (J0, L, p)
    Sinv = np.linalg.inv(S)
    q = np.einsum("jlp,pq,jlq->jl", d, Sinv, d)
    w = np.exp(-0.5 * (q - q.min(axis=1, keepdims=True)))
    w /= w.sum(axis=1, keepdims=True)
    w *= weights[:, None]
    means = params.mu + d @ E.T  # (J0, L, p)
    keep = w.ravel() > 1e-16
    return w.ravel()[keep], means.reshape(-1, p)[keep], G


def _synthesize(weights, means, covs, cfg, p):
    """Evaluate the wrapped-Gaussian mixture on the grid via its torus
    Fourier coefficients: c_hat(w) = sum_j c_j e^{-i w.m_j - w'C_j w / 2}."""
    if p == 1:
        m = cfg.mx
        freqs = np.fft.fftfreq(m, d=1.0 / m)  # integer frequencies
        var = covs[0, 0] if covs.ndim == 2 else covs[:, 0, 0]
        phase = np.exp(-1j * np.outer(means[:, 0], freqs))
        if covs.ndim == 2:
            coef = (weights @ phase) * np.exp(-0.5 * var * freqs**2)
        else:
            damp = np.exp(-0.5 * np.outer(var, freqs**2))
            coef = weights @ (phase * damp)
        x0 = -np.pi + np.pi / m
        coef = coef * np.exp(1j * freqs * x0)
        vals = np.fft.ifft(coef).real * (m / TWO_PI)
        return GridDensity(vals)

    mx, my = cfg.mx, cfg.my
    fx = np.fft.fftfreq(mx, d=1.0 / mx)
    fy = np.fft.fftfreq(my, d=1.0 / my)
    px = np.exp(-1j * np.outer(means[:, 0], fx))  # (J, mx)
    py = np.exp(-1j * np.outer(means[:, 1], fy))  # (J, my)
    if covs.ndim == 2:
        coef = (px * weights[:, None]).T @ py
        qf = (
            covs[0, 0] * fx[:, None] ** 2
            + 2 * covs[0, 1] * fx[:, None] * fy[None, :]
            + covs[1, 1] * fy[None, :] ** 2
        )
        coef = coef * np.exp(-0.5 * qf)
    else:
        coef = np.zeros((mx, my), dtype=complex)
        chunk = 64
        for lo in range(0, weights.size, chunk):
            hi = min(lo + chunk, weights.size)
            qf = (
                covs[lo:hi, None, None, 0, 0] * fx[None, :, None] ** 2
                + 2 * covs[lo:hi, None, None, 0, 1]
                * fx[None, :, None] * fy[None, None, :]
                + covs[lo:hi, None, None, 1, 1] * fy[None, None, :] ** 2
            )
            coef += np.einsum(
                "j,jxy->xy",
                weights[lo:hi],
                px[lo:hi, :, None] * py[lo:hi, None, :] * np.exp(-0.5 * qf),
            )
    x0 = -np.pi + np.pi / mx
    y0 = -np.pi + np.pi / my
    coef = coef * np.exp(1j * fx * x0)[:, None] * np.exp(1j * fy * y0)[None, :]
    vals = np.fft.ifft2(coef).real * (mx * my / TWO_PI**2)
    return GridDensity(vals)


def smoothed_tpd(kind, params: WNParams, theta_s, t, sigma0, cfg: FpeConfig,
                 trunc=None) -> GridDensity:
    """sigma0-smoothed approximate tpd on the grid.

    Integrates p^A_t(theta | phi) against a WN(theta_s, sigma0^2 I)
    start-point blur, matching the initial condition of the PDE oracle.
    """
    if t <= 0:
        raise ConfigError("t must be positive")
    if trunc is None:
        trunc = params.truncation()
    theta_s = np.atleast_1d(np.asarray(theta_s, dtype=float))
    phis, qw = _phi_quadrature(theta_s, sigma0, cfg, params.p)
    weights, means, covs = _tpd_mixture(kind, params, phis, qw, t, trunc)
    return _synthesize(weights, means, covs, cfg, params.p)


# ---------------------------------------------------------------------------
# KL benchmark


def _outer_nodes(params, cfg, outer_n):
    """Stationary-weighted start points for the outer divergence average."""
    S = params.stationary_covariance()
    if params.p == 1:
        pts = grid_centers(outer_n)[:, None]
    else:
        gx, gy = np.meshgrid(
            grid_centers(outer_n), grid_centers(outer_n), indexing="ij"
        )
        pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    w = wn_density(pts, params.mu, S)
    return pts, w / w.sum()


def _grid_kl(p_pde: GridDensity, p_approx: GridDensity) -> float:
    cell = p_pde.cell_measure()
    a = np.clip(p_pde.values, DENSITY_FLOOR, None)
    b = np.clip(p_approx.values, DENSITY_FLOOR, None)
    mask = p_pde.values > 0
    out = np.sum(p_pde.values[mask] * (np.log(a[mask]) - np.log(b[mask]))) * cell
    return float(out)


def _divergences_at(theta_s, params, kinds, ts, cfg, trunc):
    slices = _fpe_slices(params, theta_s, ts, cfg)
    out = {}
    for i, t in enumerate(ts):
        for kind in kinds:
            sm = smoothed_tpd(kind, params, theta_s, t, cfg.sigma0, cfg, trunc)
            out[(t, TpdKind.parse(kind).value)] = _grid_kl(slices[i], sm)
    return out


def kl_curves(params: WNParams, kinds, ts, cfg: FpeConfig, outer_n=12,
              n_jobs=1, trunc=None):
    """Stationary-weighted KL divergence D^A of each approximation.

    One PDE integration per start point serves every requested time and
    kind.  Returns a list of ``(t, kind, D)`` rows ordered by (t, kind).
    """
    if trunc is None:
        trunc = params.truncation()
    kinds = [TpdKind.parse(k) for k in kinds]
    ts = [float(t) for t in ts]
    nodes, w = _outer_nodes(params, cfg, outer_n)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_divergences_at)(nodes[j], params, kinds, ts, cfg, trunc)
        for j in range(nodes.shape[0])
    )
    rows = []
    for t in ts:
        for kind in kinds:
            d = sum(w[j] * results[j][(t, kind.value)] for j in range(len(results)))
            rows.append((t, kind.value, float(d)))
    return rows


def kl_divergence(kind, params: WNParams, t, cfg: FpeConfig, outer_n=12,
                  n_jobs=1) -> float:
    """Stationary-weighted KL divergence of one approximation at one time."""
    rows = kl_curves(params, [kind], [t], cfg, outer_n=outer_n, n_jobs=n_jobs)
    return rows[0][2]
