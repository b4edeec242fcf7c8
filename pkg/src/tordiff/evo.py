"""Pairwise evolutionary HMM with wrapped-normal angular emissions.

A hidden state per aligned site controls three conditionally independent
observation channels: a character pair and a secondary-class pair (both
reversible CTMCs sharing a symmetric exchangeability matrix, stationary
frequencies per hidden state and site-class) and a dihedral-angle pair
emitted by the WN process through its WOU transition density.  Each
hidden state mixes two site-classes; equal classes mean constant
evolution over the branch, unequal classes encode a jump event that
restarts both endpoints independently in the stationary laws of their
classes, making the site likelihood time-independent given the jump.

Includes the forward likelihood, FFBS posterior sampling,
Metropolis-Hastings over the evolutionary time, missing-chain
prediction, a synthetic-pair sampler, and a stochastic EM training
loop that alternates sampled latents with per-state numeric updates.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .diffusion import WNParams
from .exceptions import ConfigError, NumericError
from .inference import _pack, _unpack
from .torus import wn_log_density, wrap
from .tpd import _wou_log_tpd, sample_wou

__all__ = [
    "SiteClassPair",
    "HiddenStateParams",
    "EvoModel",
    "AlignedPairData",
    "ctmc_transition",
    "site_class_prob",
    "site_pair_likelihood",
    "pair_loglik",
    "ffbs_sample",
    "mh_time_posterior",
    "predict_missing_chain",
    "sample_pair",
    "stem_train",
    "StemResult",
    "random_model",
    "model_to_json",
    "model_from_json",
    "pair_to_dict",
    "pair_from_dict",
    "load_pairs_jsonl",
    "dump_pairs_jsonl",
]

log = logging.getLogger(__name__)

MH_STEP = 0.3  # lognormal random-walk scale for evolutionary times
MH_BURN_FRACTION = 0.2


@dataclass(frozen=True)
class SiteClassPair:
    """Per-site latent class pair; unequal values encode a jump event."""

    ra: int
    rb: int

    def __post_init__(self):
        if self.ra not in (1, 2) or self.rb not in (1, 2):
            raise ValueError("site classes take values 1 or 2")

    @property
    def is_jump(self) -> bool:
        return self.ra != self.rb


def _prob_vector(v, name):
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0) or abs(v.sum() - 1.0) > 1e-8:
        raise ValueError(f"{name} must be strictly positive and sum to one")
    return v / v.sum()


@dataclass(frozen=True)
class HiddenStateParams:
    """Per-hidden-state parameters: jump rate, site-class weights and one
    emission parameter set (CTMC frequencies + WN process) per class."""

    gamma: float
    pi: np.ndarray
    aa_freqs: np.ndarray
    ss_freqs: np.ndarray
    wn: tuple

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("jump rate gamma must be positive")
        object.__setattr__(self, "pi", _prob_vector(self.pi, "pi"))
        aa = np.stack([_prob_vector(f, "aa_freqs") for f in np.atleast_2d(self.aa_freqs)])
        ss = np.stack([_prob_vector(f, "ss_freqs") for f in np.atleast_2d(self.ss_freqs)])
        if aa.shape[0] != 2 or ss.shape[0] != 2 or len(self.wn) != 2:
            raise ValueError("exactly two site-classes per hidden state")
        object.__setattr__(self, "aa_freqs", aa)
        object.__setattr__(self, "ss_freqs", ss)
        object.__setattr__(self, "wn", tuple(self.wn))
        for w in self.wn:
            if not isinstance(w, WNParams) or w.p != 2:
                raise ValueError("angular emissions need bivariate WNParams")


def ctmc_transition(freqs, exchangeability, t):
    """Transition matrix of the reversible CTMC built from stationary
    frequencies and a symmetric exchangeability matrix.

    Rates are Q_ij = s_ij freq_j (i != j) with rows summing to zero,
    normalized to one expected substitution per unit time; P(t) = e^{Qt}
    through the eigendecomposition of the symmetrized form.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    freqs = _prob_vector(freqs, "freqs")
    U, lam, Vinv = _ctmc_eig(freqs, exchangeability)
    P = (U * np.exp(lam * t)) @ Vinv
    P = np.clip(P, 0.0, None)
    return P / P.sum(axis=1, keepdims=True)


def _ctmc_eig(freqs, exch):
    exch = np.asarray(exch, dtype=float)
    if exch.shape != (freqs.size, freqs.size) or not np.allclose(exch, exch.T):
        raise ValueError("exchangeability matrix must be symmetric")
    Q = exch * freqs[None, :]
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    rate = -float(np.sum(freqs * np.diag(Q)))
    if rate <= 0:
        raise ValueError("degenerate rate matrix")
    Q = Q / rate
    d = np.sqrt(freqs)
    sym = Q * (d[:, None] / d[None, :])
    lam, W = np.linalg.eigh(0.5 * (sym + sym.T))
    U = W / d[:, None]
    Vinv = W.T * d[None, :]
    return U, lam, Vinv


def site_class_prob(h_params: HiddenStateParams, pair: SiteClassPair, t) -> float:
    """Joint probability of a site-class pair given the hidden state.

    Equal classes keep probability e^{-gamma t} of no jump plus the
    stationary re-draw mass; unequal classes carry the jump mass.  The
    four values sum to one and satisfy detailed balance exactly.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    e = np.exp(-h_params.gamma * t)
    pa = h_params.pi[pair.ra - 1]
    pb = h_params.pi[pair.rb - 1]
    cond = pa * (1.0 - e) + (e if pair.ra == pair.rb else 0.0)
    return float(cond * pb)


def _scp_matrix(state: HiddenStateParams, t):
    """site_class_prob for the four pairs as a (ra, rb) matrix, 0-based."""
    e = np.exp(-state.gamma * t)
    pi = state.pi
    cond = pi[:, None] * (1.0 - e) + np.eye(2) * e
    return cond * pi[None, :]


# ---------------------------------------------------------------------------
# Aligned pair data


@dataclass(frozen=True)
class AlignedPairData:
    """Aligned observations of two proteins; -1 / NaN mark missing values.

    ``aa_*`` and ``ss_*`` are integer codes per aligned site, ``x_*``
    angle pairs of shape (m, 2).  The alignment itself is given; any
    element may be missing independently.
    """

    aa_a: np.ndarray
    aa_b: np.ndarray
    ss_a: np.ndarray
    ss_b: np.ndarray
    x_a: np.ndarray
    x_b: np.ndarray

    def __post_init__(self):
        aa_a = np.asarray(self.aa_a, dtype=int)
        m = aa_a.shape[0]
        for name in ("aa_b", "ss_a", "ss_b"):
            arr = np.asarray(getattr(self, name), dtype=int)
            if arr.shape != (m,):
                raise ValueError(f"{name} must have length {m}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for name in ("x_a", "x_b"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m, 2):
                raise ValueError(f"{name} must have shape ({m}, 2)")
            wrapped = np.where(np.isnan(arr), np.nan, np.mod(arr + np.pi, 2 * np.pi) - np.pi)
            wrapped.flags.writeable = False
            object.__setattr__(self, name, wrapped)
        aa_a.flags.writeable = False
        object.__setattr__(self, "aa_a", aa_a)
        if m < 1:
            raise ValueError("alignment must contain at least one site")
        if not (
            np.any(self.aa_a >= 0) or np.any(self.aa_b >= 0)
            or np.any(self.ss_a >= 0) or np.any(self.ss_b >= 0)
            or np.any(~np.isnan(self.x_a)) or np.any(~np.isnan(self.x_b))
        ):
            raise ValueError("at least one observation must be present")

    @property
    def m(self) -> int:
        return self.aa_a.shape[0]

    def replace(self, **kw) -> "AlignedPairData":
        fields = {
            "aa_a": self.aa_a, "aa_b": self.aa_b,
            "ss_a": self.ss_a, "ss_b": self.ss_b,
            "x_a": self.x_a, "x_b": self.x_b,
        }
        fields.update(kw)
        return AlignedPairData(**fields)

    def mask(self, keep=()) -> "AlignedPairData":
        """Copy with every channel outside ``keep`` turned missing."""
        m = self.m
        out = {}
        for name in ("aa_a", "aa_b", "ss_a", "ss_b"):
            out[name] = getattr(self, name) if name in keep else np.full(m, -1)
        for name in ("x_a", "x_b"):
            out[name] = getattr(self, name) if name in keep else np.full((m, 2), np.nan)
        return AlignedPairData(**out)


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class EvoModel:
    """Hidden-state set, HMM transition structure and shared CTMC
    exchangeabilities."""

    states: tuple
    trans: np.ndarray
    init: np.ndarray
    aa_exch: np.ndarray
    ss_exch: np.ndarray

    def __post_init__(self):
        states = tuple(self.states)
        h = len(states)
        trans = np.asarray(self.trans, dtype=float)
        init = np.asarray(self.init, dtype=float)
        if trans.shape != (h, h):
            raise ValueError("transition matrix must be h x h")
        if np.any(trans < 0) or not np.allclose(trans.sum(axis=1), 1.0, atol=1e-8):
            raise ValueError("transition matrix rows must sum to one")
        if init.shape != (h,) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-8:
            raise ValueError("initial distribution must sum to one")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "trans", trans / trans.sum(axis=1, keepdims=True))
        object.__setattr__(self, "init", init / init.sum())
        for name in ("aa_exch", "ss_exch"):
            e = np.asarray(getattr(self, name), dtype=float)
            if not np.allclose(e, e.T):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, e)
        # cache CTMC eigendecompositions per (state, class, chain)
        aa = [[_ctmc_eig(s.aa_freqs[r], self.aa_exch) for r in range(2)] for s in states]
        ss = [[_ctmc_eig(s.ss_freqs[r], self.ss_exch) for r in range(2)] for s in states]
        object.__setattr__(self, "_aa_eig", aa)
        object.__setattr__(self, "_ss_eig", ss)

    @property
    def h(self) -> int:
        return len(self.states)

    @property
    def n_aa(self) -> int:
        return self.states[0].aa_freqs.shape[1]

    @property
    def n_ss(self) -> int:
        return self.states[0].ss_freqs.shape[1]

    def ctmc_matrix(self, chain, s, r, t):
        U, lam, Vinv = (self._aa_eig if chain == "aa" else self._ss_eig)[s][r]
        P = (U * np.exp(lam * t)) @ Vinv
        P = np.clip(P, 1e-300, None)
        return P / P.sum(axis=1, keepdims=True)


def site_pair_likelihood(
    h_params: HiddenStateParams,
    pair: SiteClassPair,
    obs: dict,
    t,
    aa_exch=None,
    ss_exch=None,
) -> float:
    """Likelihood of one aligned-site observation under a class pair.

    ``obs`` maps channel names (``aa_a``, ``aa_b``, ``ss_a``, ``ss_b``,
    ``x_a``, ``x_b``) to values; omit or pass None/-1/NaN for missing.
    Constant evolution couples the two sides through the transition
    kernels, a jump multiplies the per-side stationary densities, and
    missing components contribute a factor of one.  Exchangeabilities
    default to equal rates.
    """
    ra, rb = pair.ra - 1, pair.rb - 1
    const = pair.ra == pair.rb
    out = 1.0

    def present_int(key):
        v = obs.get(key)
        return None if v is None or int(v) < 0 else int(v)

    for chain, exch_arg, freqs in (
        ("aa", aa_exch, h_params.aa_freqs),
        ("ss", ss_exch, h_params.ss_freqs),
    ):
        a = present_int(f"{chain}_a")
        b = present_int(f"{chain}_b")
        exch = (
            np.ones((freqs.shape[1], freqs.shape[1]))
            if exch_arg is None
            else exch_arg
        )
        if a is not None and b is not None:
            if const:
                P = ctmc_transition(freqs[ra], exch, t)
                out *= freqs[ra][a] * P[a, b]
            else:
                out *= freqs[ra][a] * freqs[rb][b]
        elif a is not None:
            out *= freqs[ra][a]
        elif b is not None:
            out *= freqs[rb][b]

    def present_ang(key):
        v = obs.get(key)
        if v is None:
            return None
        v = np.asarray(v, dtype=float)
        return None if np.any(np.isnan(v)) else v

    xa = present_ang("x_a")
    xb = present_ang("x_b")
    wn_a, wn_b = h_params.wn[ra], h_params.wn[rb]
    if xa is not None and xb is not None:
        if const:
            out *= float(
                np.exp(
                    wn_log_density(xa, wn_a.mu, wn_a.stationary_covariance())
                    + _wou_log_tpd(xb[None, :], xa[None, :], wn_a, t, wn_a.truncation())[0]
                )
            )
        else:
            out *= float(
                np.exp(
                    wn_log_density(xa, wn_a.mu, wn_a.stationary_covariance())
                    + wn_log_density(xb, wn_b.mu, wn_b.stationary_covariance())
                )
            )
    elif xa is not None:
        out *= float(np.exp(wn_log_density(xa, wn_a.mu, wn_a.stationary_covariance())))
    elif xb is not None:
        out *= float(np.exp(wn_log_density(xb, wn_b.mu, wn_b.stationary_covariance())))
    return out


# ---------------------------------------------------------------------------
# Vectorized emission machinery


def _site_factors(model: EvoModel, data: AlignedPairData, t):
    """Observation likelihood per (state, ra, rb, site) plus the class-pair
    probabilities per state: returns (F (h,2,2,m), SCP (h,2,2))."""
    m = data.m
    h = model.h
    F = np.ones((h, 2, 2, m))
    scp = np.empty((h, 2, 2))

    aa_both = (data.aa_a >= 0) & (data.aa_b >= 0)
    aa_onlya = (data.aa_a >= 0) & ~aa_both
    aa_onlyb = (data.aa_b >= 0) & ~aa_both
    ss_both = (data.ss_a >= 0) & (data.ss_b >= 0)
    ss_onlya = (data.ss_a >= 0) & ~ss_both
    ss_onlyb = (data.ss_b >= 0) & ~ss_both
    xa_ok = ~np.isnan(data.x_a).any(axis=1)
    xb_ok = ~np.isnan(data.x_b).any(axis=1)
    x_both = xa_ok & xb_ok
    x_onlya = xa_ok & ~x_both
    x_onlyb = xb_ok & ~x_both

    for s, st in enumerate(model.states):
        scp[s] = _scp_matrix(st, t)
        # per class: stationary log-densities and WOU transition terms
        la = np.zeros((2, m))
        lb = np.zeros((2, m))
        lw = np.zeros((2, m))
        for r in range(2):
            wn = st.wn[r]
            S = wn.stationary_covariance()
            K = wn.truncation()
            if xa_ok.any():
                la[r, xa_ok] = wn_log_density(data.x_a[xa_ok], wn.mu, S, K)
            if xb_ok.any():
                lb[r, xb_ok] = wn_log_density(data.x_b[xb_ok], wn.mu, S, K)
            if x_both.any():
                lw[r, x_both] = _wou_log_tpd(
                    data.x_b[x_both], data.x_a[x_both], wn, t, K
                )
        for ra in range(2):
            for rb in range(2):
                logf = np.zeros(m)
                # character chain
                if aa_both.any():
                    a, b = data.aa_a[aa_both], data.aa_b[aa_both]
                    if ra == rb:
                        P = model.ctmc_matrix("aa", s, ra, t)
                        logf[aa_both] += np.log(st.aa_freqs[ra][a] * P[a, b])
                    else:
                        logf[aa_both] += np.log(
                            st.aa_freqs[ra][a] * st.aa_freqs[rb][b]
                        )
                if aa_onlya.any():
                    logf[aa_onlya] += np.log(st.aa_freqs[ra][data.aa_a[aa_onlya]])
                if aa_onlyb.any():
                    logf[aa_onlyb] += np.log(st.aa_freqs[rb][data.aa_b[aa_onlyb]])
                # secondary chain
                if ss_both.any():
                    a, b = data.ss_a[ss_both], data.ss_b[ss_both]
                    if ra == rb:
                        P = model.ctmc_matrix("ss", s, ra, t)
                        logf[ss_both] += np.log(st.ss_freqs[ra][a] * P[a, b])
                    else:
                        logf[ss_both] += np.log(
                            st.ss_freqs[ra][a] * st.ss_freqs[rb][b]
                        )
                if ss_onlya.any():
                    logf[ss_onlya] += np.log(st.ss_freqs[ra][data.ss_a[ss_onlya]])
                if ss_onlyb.any():
                    logf[ss_onlyb] += np.log(st.ss_freqs[rb][data.ss_b[ss_onlyb]])
                # angles
                if ra == rb:
                    logf[x_both] += la[ra, x_both] + lw[ra, x_both]
                else:
                    logf[x_both] += la[ra, x_both] + lb[rb, x_both]
                logf[x_onlya] += la[ra, x_onlya]
                logf[x_onlyb] += lb[rb, x_onlyb]
                F[s, ra, rb] = np.exp(logf)
    return F, scp


def _emissions(model, data, t):
    F, scp = _site_factors(model, data, t)
    em = np.einsum("srqm,srq->ms", F, scp)
    return em, F, scp


def _forward(model, data, t):
    em, F, scp = _emissions(model, data, t)
    m, h = em.shape
    alphas = np.empty((m, h))
    logc = 0.0
    a = model.init * em[0]
    for i in range(m):
        if i > 0:
            a = (alphas[i - 1] @ model.trans) * em[i]
        c = a.sum()
        if c <= 0 or not np.isfinite(c):
            raise NumericError(f"all-zero emission at aligned site {i}")
        alphas[i] = a / c
        logc += np.log(c)
    return alphas, logc, F, scp


def pair_loglik(model: EvoModel, data: AlignedPairData, t) -> float:
    """Log-likelihood of an aligned pair by the scaled forward algorithm."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    _, logc, _, _ = _forward(model, data, t)
    return float(logc)


def ffbs_sample(model: EvoModel, data: AlignedPairData, t, seed=None, rng=None):
    """Joint posterior draw of the hidden sequence and site-class pairs.

    Returns (states (m,) 0-based, classes (m, 2) 1-based).  The forward
    pass is shared with :func:`pair_loglik`; backward sampling is exact.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    alphas, _, F, scp = _forward(model, data, t)
    states = _backward_sample(alphas, model.trans, rng)
    classes = _sample_classes(states, F, scp, rng)
    return states, classes


def _ffbs_batch(model, data, t, n, rng):
    """``n`` independent FFBS draws sharing one forward pass.

    Returns (states (n, m), classes (n, m, 2) 1-based).
    """
    alphas, _, F, scp = _forward(model, data, t)
    m, h = alphas.shape
    states = np.empty((n, m), dtype=int)
    p = alphas[-1] / alphas[-1].sum()
    states[:, -1] = np.searchsorted(np.cumsum(p), rng.random(n) * p.sum())
    for i in range(m - 2, -1, -1):
        w = alphas[i][None, :] * model.trans[:, states[:, i + 1]].T  # (n, h)
        cum = np.cumsum(w, axis=1)
        u = rng.random(n) * cum[:, -1]
        states[:, i] = (cum < u[:, None]).sum(axis=1)
    states = np.clip(states, 0, h - 1)
    # class pairs per (draw, site)
    gathered = F[states, :, :, np.arange(m)[None, :]] * scp[states]  # (n, m, 2, 2)
    w = gathered.reshape(n, m, 4)
    cum = np.cumsum(w, axis=2)
    u = rng.random((n, m)) * cum[:, :, -1]
    idx = np.clip((cum < u[:, :, None]).sum(axis=2), 0, 3)
    classes = np.stack([idx // 2 + 1, idx % 2 + 1], axis=-1)
    return states, classes


def _backward_sample(alphas, trans, rng):
    m = alphas.shape[0]
    states = np.empty(m, dtype=int)
    u = rng.random(m)
    p = alphas[-1]
    states[-1] = np.searchsorted(np.cumsum(p), u[-1] * p.sum())
    for i in range(m - 2, -1, -1):
        p = alphas[i] * trans[:, states[i + 1]]
        states[i] = np.searchsorted(np.cumsum(p), u[i] * p.sum())
    return np.clip(states, 0, alphas.shape[1] - 1)


def _sample_classes(states, F, scp, rng):
    m = states.shape[0]
    classes = np.empty((m, 2), dtype=int)
    u = rng.random(m)
    for i, s in enumerate(states):
        w = (F[s, :, :, i] * scp[s]).ravel()
        idx = np.searchsorted(np.cumsum(w), u[i] * w.sum())
        idx = min(idx, 3)
        classes[i] = (idx // 2 + 1, idx % 2 + 1)
    return classes


def mh_time_posterior(
    model: EvoModel,
    data: AlignedPairData,
    prior_rate: float,
    n_samples: int,
    seed=None,
    rng=None,
    t_init=None,
    step=MH_STEP,
):
    """Metropolis-Hastings samples of the evolutionary time.

    Exponential(prior_rate) prior, multiplicative lognormal proposals of
    scale ``step``; the chain runs ``n_samples`` iterations and the
    first 20% are discarded.
    """
    if prior_rate <= 0:
        raise ValueError("prior_rate must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    t = float(t_init) if t_init is not None else 1.0 / prior_rate
    lp = pair_loglik(model, data, t) - prior_rate * t
    out = np.empty(n_samples)
    for i in range(n_samples):
        prop = t * np.exp(step * rng.standard_normal())
        lp_prop = pair_loglik(model, data, prop) - prior_rate * prop
        # multiplicative proposal: Jacobian log(prop) - log(t)
        if np.log(rng.random()) < lp_prop - lp + np.log(prop) - np.log(t):
            t, lp = prop, lp_prop
        out[i] = t
    burn = int(MH_BURN_FRACTION * n_samples)
    return out[burn:]


def _sample_sdi(wn: WNParams, rng):
    z = rng.standard_normal(2)
    return wrap(wn.mu + np.linalg.cholesky(wn.stationary_covariance()) @ z)


def predict_missing_chain(
    model: EvoModel,
    data: AlignedPairData,
    prior_rate: float,
    n_samples: int,
    seed=None,
    mh_steps=600,
    t_fixed=None,
):
    """Posterior draws of the missing angle sequence of protein b.

    Per draw: a branch time from the Metropolis-Hastings chain, a hidden
    sequence by FFBS at that time, per-site class pairs, then angles --
    a stationary draw of the new class after a jump, a WOU transition
    draw from the partner angles under constant evolution (or the
    stationary law when the partner is unobserved too).
    """
    if not np.all(np.isnan(data.x_b)):
        raise ValueError("x_b must be entirely missing for prediction")
    rng = np.random.default_rng(seed)
    if t_fixed is None:
        ts = mh_time_posterior(
            model, data, prior_rate, max(mh_steps, 2 * n_samples), rng=rng
        )
        pick = np.linspace(0, ts.size - 1, n_samples).astype(int)
        ts = ts[pick]
    else:
        ts = np.full(n_samples, float(t_fixed))
    out = np.empty((n_samples, data.m, 2))
    xa_ok = ~np.isnan(data.x_a).any(axis=1)
    for k, t in enumerate(ts):
        states, classes = ffbs_sample(model, data, t, rng=rng)
        for i in range(data.m):
            st = model.states[states[i]]
            ra, rb = classes[i] - 1
            if ra != rb or not xa_ok[i]:
                out[k, i] = _sample_sdi(st.wn[rb], rng)
            else:
                out[k, i] = sample_wou(data.x_a[i], st.wn[rb], t, rng=rng)
    return out


def sample_pair(model: EvoModel, m: int, t, seed=None, rng=None,
                return_latents=False):
    """Generate one synthetic aligned pair (all channels observed)."""
    if rng is None:
        rng = np.random.default_rng(seed)
    h = model.h
    states = np.empty(m, dtype=int)
    states[0] = rng.choice(h, p=model.init)
    for i in range(1, m):
        states[i] = rng.choice(h, p=model.trans[states[i - 1]])
    aa_a = np.empty(m, dtype=int)
    aa_b = np.empty(m, dtype=int)
    ss_a = np.empty(m, dtype=int)
    ss_b = np.empty(m, dtype=int)
    x_a = np.empty((m, 2))
    x_b = np.empty((m, 2))
    classes = np.empty((m, 2), dtype=int)
    for i, s in enumerate(states):
        st = model.states[s]
        w = _scp_matrix(st, t).ravel()
        idx = rng.choice(4, p=w / w.sum())
        ra, rb = idx // 2, idx % 2
        classes[i] = (ra + 1, rb + 1)
        aa_a[i] = rng.choice(model.n_aa, p=st.aa_freqs[ra])
        ss_a[i] = rng.choice(model.n_ss, p=st.ss_freqs[ra])
        x_a[i] = _sample_sdi(st.wn[ra], rng)
        if ra == rb:
            Paa = model.ctmc_matrix("aa", s, ra, t)
            Pss = model.ctmc_matrix("ss", s, ra, t)
            aa_b[i] = rng.choice(model.n_aa, p=Paa[aa_a[i]])
            ss_b[i] = rng.choice(model.n_ss, p=Pss[ss_a[i]])
            x_b[i] = sample_wou(x_a[i], st.wn[ra], t, rng=rng)
        else:
            aa_b[i] = rng.choice(model.n_aa, p=st.aa_freqs[rb])
            ss_b[i] = rng.choice(model.n_ss, p=st.ss_freqs[rb])
            x_b[i] = _sample_sdi(st.wn[rb], rng)
    pair = AlignedPairData(aa_a, aa_b, ss_a, ss_b, x_a, x_b)
    if return_latents:
        return pair, states, classes
    return pair


def random_model(h, n_aa=4, n_ss=2, seed=None, rng=None) -> EvoModel:
    """Random starting model for training (sticky transitions, spread
    angular means, mildly informative frequencies)."""
    if rng is None:
        rng = np.random.default_rng(seed)
    states = []
    for _ in range(h):
        wn = tuple(
            WNParams(
                alpha=[1.0, 1.0, 0.0],
                mu=rng.uniform(-np.pi, np.pi, 2),
                sigma=[1.0, 1.0],
            )
            for _ in range(2)
        )
        states.append(
            HiddenStateParams(
                gamma=float(rng.uniform(0.5, 2.0)),
                pi=rng.dirichlet(np.ones(2) * 5),
                aa_freqs=rng.dirichlet(np.ones(n_aa) * 2, size=2),
                ss_freqs=rng.dirichlet(np.ones(n_ss) * 2, size=2),
                wn=wn,
            )
        )
    trans = rng.dirichlet(np.ones(h), size=h) + 2.0 * np.eye(h)
    trans /= trans.sum(axis=1, keepdims=True)
    return EvoModel(
        states=tuple(states),
        trans=trans,
        init=np.full(h, 1.0 / h),
        aa_exch=np.ones((n_aa, n_aa)),
        ss_exch=np.ones((n_ss, n_ss)),
    )


# ---------------------------------------------------------------------------
# StEM training


@dataclass(frozen=True)
class StemResult:
    model: EvoModel
    loglik_trace: np.ndarray  # mean complete-data log-likelihood per sweep


def _complete_data_loglik(model, data, states, classes, t, F=None, scp=None):
    if F is None:
        F, scp = _site_factors(model, data, t)
    ll = np.log(model.init[states[0]])
    ll += np.sum(np.log(model.trans[states[:-1], states[1:]]))
    idx = np.arange(data.m)
    vals = F[states, classes[:, 0] - 1, classes[:, 1] - 1, idx]
    probs = scp[states, classes[:, 0] - 1, classes[:, 1] - 1]
    return float(ll + np.sum(np.log(vals * probs)))


def _optimize(fun, x0, maxfev):
    res = minimize(
        fun, x0, method="Nelder-Mead",
        options={"maxfev": maxfev, "xatol": 1e-4, "fatol": 1e-6},
    )
    return res.x if np.isfinite(res.fun) else x0


def _update_gamma_pi(state, records, maxfev):
    """records: list of (ra0, rb0, t)."""
    if not records:
        return state.gamma, state.pi
    ra = np.array([r[0] for r in records])
    rb = np.array([r[1] for r in records])
    ts = np.array([r[2] for r in records])
    same = ra == rb

    def nll(x):
        gamma = np.exp(np.clip(x[0], -8, 8))
        p1 = 1.0 / (1.0 + np.exp(-np.clip(x[1], -12, 12)))
        pi = np.array([p1, 1.0 - p1])
        e = np.exp(-gamma * ts)
        cond = pi[ra] * (1.0 - e) + np.where(same, e, 0.0)
        val = cond * pi[rb]
        if np.any(val <= 0):
            return np.inf
        return -np.sum(np.log(val))

    x0 = [np.log(state.gamma), np.log(state.pi[0] / state.pi[1])]
    x = _optimize(nll, x0, maxfev)
    gamma = float(np.exp(np.clip(x[0], -8, 8)))
    p1 = float(1.0 / (1.0 + np.exp(-np.clip(x[1], -12, 12))))
    p1 = min(max(p1, 1e-4), 1 - 1e-4)
    return gamma, np.array([p1, 1.0 - p1])


def _update_freqs(freqs0, exch, const_pairs, singles, maxfev):
    """MLE of stationary frequencies of one chain and class.

    ``const_pairs``: list of (a, b, t) evolved under this class;
    ``singles``: list of observed codes drawn from the stationary law.
    """
    if not const_pairs and not singles:
        return freqs0
    k = freqs0.size
    singles = np.asarray(singles, dtype=int)
    if const_pairs:
        pa = np.array([r[0] for r in const_pairs])
        pb = np.array([r[1] for r in const_pairs])
        pt = np.array([r[2] for r in const_pairs])
        t_groups = {}
        for j, t in enumerate(pt):
            t_groups.setdefault(round(float(t), 12), []).append(j)

    def nll(x):
        z = np.concatenate([[0.0], np.clip(x, -12, 12)])
        f = np.exp(z - z.max())
        f = f / f.sum()
        if np.any(f < 1e-9):
            return np.inf
        out = 0.0
        if singles.size:
            out -= np.sum(np.log(f[singles]))
        if const_pairs:
            for t, idx in t_groups.items():
                P = ctmc_transition(f, exch, t)
                out -= np.sum(np.log(f[pa[idx]] * P[pa[idx], pb[idx]]))
        return out

    x0 = np.log(freqs0[1:] / freqs0[0])
    x = _optimize(nll, x0, maxfev)
    z = np.concatenate([[0.0], np.clip(x, -12, 12)])
    f = np.exp(z - z.max())
    f = np.maximum(f / f.sum(), 1e-6)
    return f / f.sum()


def _update_wn(wn0, const_angles, single_angles, maxfev):
    """MLE of one class's WN parameters from sampled assignments.

    ``const_angles``: list of (x_a, x_b, t); ``single_angles``: array of
    stationary draws (either side).
    """
    if not const_angles and not len(single_angles):
        return wn0
    singles = np.asarray(single_angles, dtype=float).reshape(-1, 2)
    if const_angles:
        xa = np.stack([r[0] for r in const_angles])
        xb = np.stack([r[1] for r in const_angles])
        ts = np.array([r[2] for r in const_angles])
        t_groups = {}
        for j, t in enumerate(ts):
            t_groups.setdefault(round(float(t), 12), []).append(j)

    def nll(x):
        try:
            wn = _unpack(x, 2, None)
            S = wn.stationary_covariance()
            K = wn.truncation()
            out = 0.0
            if singles.size:
                out -= float(np.sum(wn_log_density(singles, wn.mu, S, K)))
            if const_angles:
                for t, idx in t_groups.items():
                    idx = np.asarray(idx)
                    out -= float(
                        np.sum(wn_log_density(xa[idx], wn.mu, S, K))
                        + np.sum(_wou_log_tpd(xb[idx], xa[idx], wn, t, K))
                    )
            return out
        except (ValueError, NumericError, FloatingPointError):
            return np.inf

    x0 = _pack(wn0, fit_sigma=True)
    x = _optimize(nll, x0, maxfev)
    try:
        return _unpack(x, 2, None)
    except ValueError:
        return wn0


def stem_train(
    initial: EvoModel,
    dataset,
    iters: int,
    seed=None,
    prior_rate: float = 0.1,
    mh_steps: int = 100,
    draws_per_pair: int = 1,
    maxfev: int = 400,
) -> StemResult:
    """Stochastic EM: sample latents (times by Metropolis-Hastings, hidden
    sequences and classes by FFBS), then update parameters per state.

    The transition matrix and initial distribution come from sampled
    transition proportions; the remaining parameters are updated by
    bounded Nelder-Mead on the sampled complete-data likelihood.  States
    or classes with no sampled assignments keep their previous values.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must not be empty")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = np.random.default_rng(seed)
    model = initial
    h = model.h
    t_state = [1.0 / prior_rate] * len(dataset)
    trace = []
    for sweep in range(iters):
        samples = []  # (pair_idx, t, states, classes)
        cdl = []
        for j, pair in enumerate(dataset):
            ts = mh_time_posterior(
                model, pair, prior_rate, mh_steps, rng=rng, t_init=t_state[j]
            )
            t_state[j] = float(ts[-1])
            for _ in range(draws_per_pair):
                states, classes = ffbs_sample(model, pair, t_state[j], rng=rng)
                samples.append((j, t_state[j], states, classes))
                cdl.append(
                    _complete_data_loglik(model, pair, states, classes, t_state[j])
                )
        trace.append(float(np.mean(cdl)))
        model = _m_step(model, dataset, samples, maxfev)
    return StemResult(model=model, loglik_trace=np.array(trace))


def _m_step(model, dataset, samples, maxfev):
    h = model.h
    trans_counts = np.zeros((h, h))
    init_counts = np.zeros(h)
    per_state = [
        {
            "classpairs": [],
            "aa_const": [[], []], "aa_single": [[], []],
            "ss_const": [[], []], "ss_single": [[], []],
            "x_const": [[], []], "x_single": [[], []],
        }
        for _ in range(h)
    ]
    for j, t, states, classes in samples:
        pair = dataset[j]
        init_counts[states[0]] += 1
        np.add.at(trans_counts, (states[:-1], states[1:]), 1)
        for i in range(pair.m):
            s = states[i]
            ra, rb = classes[i] - 1
            rec = per_state[s]
            rec["classpairs"].append((ra, rb, t))
            aa_a, aa_b = pair.aa_a[i], pair.aa_b[i]
            ss_a, ss_b = pair.ss_a[i], pair.ss_b[i]
            xa_ok = not np.any(np.isnan(pair.x_a[i]))
            xb_ok = not np.any(np.isnan(pair.x_b[i]))
            if ra == rb:
                if aa_a >= 0 and aa_b >= 0:
                    rec["aa_const"][ra].append((aa_a, aa_b, t))
                elif aa_a >= 0:
                    rec["aa_single"][ra].append(aa_a)
                elif aa_b >= 0:
                    rec["aa_single"][rb].append(aa_b)
                if ss_a >= 0 and ss_b >= 0:
                    rec["ss_const"][ra].append((ss_a, ss_b, t))
                elif ss_a >= 0:
                    rec["ss_single"][ra].append(ss_a)
                elif ss_b >= 0:
                    rec["ss_single"][rb].append(ss_b)
                if xa_ok and xb_ok:
                    rec["x_const"][ra].append((pair.x_a[i], pair.x_b[i], t))
                elif xa_ok:
                    rec["x_single"][ra].append(pair.x_a[i])
                elif xb_ok:
                    rec["x_single"][rb].append(pair.x_b[i])
            else:
                if aa_a >= 0:
                    rec["aa_single"][ra].append(aa_a)
                if aa_b >= 0:
                    rec["aa_single"][rb].append(aa_b)
                if ss_a >= 0:
                    rec["ss_single"][ra].append(ss_a)
                if ss_b >= 0:
                    rec["ss_single"][rb].append(ss_b)
                if xa_ok:
                    rec["x_single"][ra].append(pair.x_a[i])
                if xb_ok:
                    rec["x_single"][rb].append(pair.x_b[i])

    new_trans = model.trans.copy()
    for s in range(h):
        row = trans_counts[s]
        if row.sum() > 0:
            new_trans[s] = row / row.sum()
        else:
            log.info("state %d: no sampled transitions, row kept", s)
    new_init = (
        init_counts / init_counts.sum() if init_counts.sum() > 0 else model.init
    )

    new_states = []
    for s, st in enumerate(model.states):
        rec = per_state[s]
        if not rec["classpairs"]:
            log.info("state %d: never sampled, parameters kept", s)
            new_states.append(st)
            continue
        gamma, pi = _update_gamma_pi(st, rec["classpairs"], maxfev)
        aa = st.aa_freqs.copy()
        ss = st.ss_freqs.copy()
        wns = list(st.wn)
        for r in range(2):
            aa[r] = _update_freqs(
                st.aa_freqs[r], model.aa_exch,
                rec["aa_const"][r], rec["aa_single"][r], maxfev,
            )
            ss[r] = _update_freqs(
                st.ss_freqs[r], model.ss_exch,
                rec["ss_const"][r], rec["ss_single"][r], maxfev,
            )
            wns[r] = _update_wn(
                st.wn[r], rec["x_const"][r], rec["x_single"][r], maxfev
            )
        new_states.append(
            HiddenStateParams(
                gamma=gamma, pi=pi, aa_freqs=aa, ss_freqs=ss, wn=tuple(wns)
            )
        )
    return EvoModel(
        states=tuple(new_states),
        trans=new_trans,
        init=new_init,
        aa_exch=model.aa_exch,
        ss_exch=model.ss_exch,
    )


# ---------------------------------------------------------------------------
# Serialization (versioned JSON; one aligned pair per JSON line)


def model_to_json(model: EvoModel) -> str:
    doc = {
        "schema": "tordiff-evomodel-v1",
        "h": model.h,
        "n_aa": model.n_aa,
        "n_ss": model.n_ss,
        "trans": model.trans.tolist(),
        "init": model.init.tolist(),
        "aa_exch": model.aa_exch.tolist(),
        "ss_exch": model.ss_exch.tolist(),
        "states": [
            {
                "gamma": float(st.gamma),
                "pi": st.pi.tolist(),
                "classes": [
                    {
                        "aa_freqs": st.aa_freqs[r].tolist(),
                        "ss_freqs": st.ss_freqs[r].tolist(),
                        "wn": {
                            "alpha": st.wn[r].alpha.tolist(),
                            "mu": st.wn[r].mu.tolist(),
                            "sigma": st.wn[r].sigma.tolist(),
                        },
                    }
                    for r in range(2)
                ],
            }
            for st in model.states
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _schema(name):
    from pathlib import Path

    return json.loads(
        (Path(__file__).parent / "schemas" / name).read_text()
    )


def _validate_doc(doc, schema_name, what):
    import jsonschema

    try:
        jsonschema.validate(doc, _schema(schema_name))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{what}: {exc.message}") from exc


def model_from_json(text: str) -> EvoModel:
    doc = json.loads(text)
    if doc.get("schema") != "tordiff-evomodel-v1":
        raise ConfigError("model JSON: unknown or missing schema")
    _validate_doc(doc, "evomodel.schema.json", "model JSON")
    states = []
    for sd in doc["states"]:
        classes = sd["classes"]
        states.append(
            HiddenStateParams(
                gamma=sd["gamma"],
                pi=np.array(sd["pi"]),
                aa_freqs=np.array([c["aa_freqs"] for c in classes]),
                ss_freqs=np.array([c["ss_freqs"] for c in classes]),
                wn=tuple(
                    WNParams(
                        alpha=c["wn"]["alpha"],
                        mu=c["wn"]["mu"],
                        sigma=c["wn"]["sigma"],
                    )
                    for c in classes
                ),
            )
        )
    return EvoModel(
        states=tuple(states),
        trans=np.array(doc["trans"]),
        init=np.array(doc["init"]),
        aa_exch=np.array(doc["aa_exch"]),
        ss_exch=np.array(doc["ss_exch"]),
    )


def pair_to_dict(pair: AlignedPairData) -> dict:
    def ints(arr):
        return [None if v < 0 else int(v) for v in arr]

    def angs(arr):
        return [None if np.any(np.isnan(row)) else [float(row[0]), float(row[1])] for row in arr]

    return {
        "aa_a": ints(pair.aa_a), "aa_b": ints(pair.aa_b),
        "ss_a": ints(pair.ss_a), "ss_b": ints(pair.ss_b),
        "x_a": angs(pair.x_a), "x_b": angs(pair.x_b),
    }


def pair_from_dict(d: dict) -> AlignedPairData:
    def ints(vals):
        return np.array([-1 if v is None else int(v) for v in vals])

    def angs(vals):
        return np.array(
            [[np.nan, np.nan] if v is None else [float(v[0]), float(v[1])] for v in vals]
        )

    return AlignedPairData(
        aa_a=ints(d["aa_a"]), aa_b=ints(d["aa_b"]),
        ss_a=ints(d["ss_a"]), ss_b=ints(d["ss_b"]),
        x_a=angs(d["x_a"]), x_b=angs(d["x_b"]),
    )


def dump_pairs_jsonl(pairs) -> str:
    return "\n".join(json.dumps(pair_to_dict(p)) for p in pairs) + "\n"


def load_pairs_jsonl(text: str):
    lines = [line for line in text.splitlines() if line.strip()]
    if lines:
        _validate_doc(json.loads(lines[0]), "pairdata.schema.json", "pair dataset")
    return [pair_from_dict(json.loads(line)) for line in lines]
