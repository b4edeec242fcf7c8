"""Scikit-learn compatible estimators over the functional core.

``WNDiffusionMLE`` fits the WN process to an equally spaced angular
series; ``EvoPairHMM`` trains the evolutionary pair model on aligned
pair data and predicts missing angle chains.  Both inherit
``get_params`` / ``set_params`` so they compose with pipelines and
model-selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .evo import (
    mh_time_posterior,
    pair_loglik,
    predict_missing_chain,
    random_model,
    stem_train,
)
from .inference import FitConfig, fit_mle, loglik
from .torus import wrap
from .tpd import Trajectory, simulate_euler
from .validation import check_angles, check_pairs

__all__ = ["WNDiffusionMLE", "EvoPairHMM"]


class WNDiffusionMLE(BaseEstimator):
    """Approximate maximum-likelihood estimator of the WN process.

    Parameters
    ----------
    kind : str, one of "euler", "so", "wou"
        Transition-density approximation used in the likelihood.
    delta : float
        Observation spacing of the series passed to :meth:`fit`.
    fix_sigma : tuple or None
        Known diffusion standard deviations; estimated when None.
    stationary_start : bool
        Include the stationary density of the first point.
    """

    def __init__(self, kind="wou", delta=1.0, fix_sigma=None,
                 stationary_start=True, ftol=1e-8, max_evals=10_000,
                 trunc=None):
        self.kind = kind
        self.delta = delta
        self.fix_sigma = fix_sigma
        self.stationary_start = stationary_start
        self.ftol = ftol
        self.max_evals = max_evals
        self.trunc = trunc

    def _config(self):
        return FitConfig(
            kind=self.kind,
            include_stationary_start=self.stationary_start,
            fix_sigma=self.fix_sigma,
            ftol=self.ftol,
            max_evals=self.max_evals,
            trunc=self.trunc,
        )

    def fit(self, X, y=None):
        X = check_angles(X)
        traj = Trajectory(delta=self.delta, points=X)
        res = fit_mle(traj, self._config())
        self.n_features_in_ = X.shape[1]
        self.params_ = res.params
        self.result_ = res
        self.loglik_ = res.loglik
        self.converged_ = res.converged
        return self

    def score(self, X, y=None):
        """Mean per-transition log-likelihood of a series under the fit."""
        X = check_angles(X, p=self.params_.p)
        traj = Trajectory(delta=self.delta, points=X)
        return loglik(traj, self.params_, self._config()) / traj.n_transitions

    def sample(self, n, theta0=None, refine_m=10, seed=None):
        """Simulate a trajectory from the fitted parameters."""
        theta0 = self.params_.mu if theta0 is None else wrap(np.asarray(theta0))
        traj = simulate_euler(
            self.params_, theta0, self.delta, n, refine_m=refine_m, seed=seed
        )
        return traj.points


class EvoPairHMM(BaseEstimator):
    """Evolutionary pair HMM trained by stochastic EM on aligned pairs."""

    def __init__(self, n_states=4, n_iter=10, n_aa=4, n_ss=2,
                 prior_rate=0.1, mh_steps=100, draws_per_pair=1,
                 max_evals=400, init_model=None, random_state=None):
        self.n_states = n_states
        self.n_iter = n_iter
        self.n_aa = n_aa
        self.n_ss = n_ss
        self.prior_rate = prior_rate
        self.mh_steps = mh_steps
        self.draws_per_pair = draws_per_pair
        self.max_evals = max_evals
        self.init_model = init_model
        self.random_state = random_state

    def fit(self, X, y=None):
        pairs = check_pairs(X)
        init = self.init_model
        if init is None:
            init = random_model(
                self.n_states, n_aa=self.n_aa, n_ss=self.n_ss,
                seed=self.random_state,
            )
        res = stem_train(
            init,
            pairs,
            iters=self.n_iter,
            seed=self.random_state,
            prior_rate=self.prior_rate,
            mh_steps=self.mh_steps,
            draws_per_pair=self.draws_per_pair,
            maxfev=self.max_evals,
        )
        self.model_ = res.model
        self.training_log_ = res.loglik_trace
        return self

    def score(self, X, t=None, y=None):
        """Mean pair log-likelihood; integrates each pair at its posterior
        mean time when ``t`` is None."""
        pairs = check_pairs(X)
        vals = []
        for j, p in enumerate(pairs):
            tj = t
            if tj is None:
                ts = mh_time_posterior(
                    self.model_, p, self.prior_rate, 400,
                    seed=[0 if self.random_state is None else self.random_state, j],
                )
                tj = float(np.mean(ts))
            vals.append(pair_loglik(self.model_, p, tj))
        return float(np.mean(vals))

    def sample_xb(self, pair, n_samples=100, seed=None, t_fixed=None):
        """Posterior draws of the missing angle chain of protein b."""
        return predict_missing_chain(
            self.model_, pair, self.prior_rate, n_samples,
            seed=self.random_state if seed is None else seed,
            t_fixed=t_fixed,
        )

    def predict(self, X, n_samples=100, seed=None):
        """Circular-mean point predictions of each pair's missing chain."""
        pairs = check_pairs(X)
        out = []
        for j, p in enumerate(pairs):
            draws = self.sample_xb(
                p, n_samples=n_samples,
                seed=j if seed is None else [seed, j],
            )
            z = np.exp(1j * draws).mean(axis=0)
            out.append(wrap(np.angle(z)))
        return out
