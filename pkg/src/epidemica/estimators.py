"""scikit-learn style front ends.

These wrap the functional API so the pieces can sit in pipelines and
parameter searches: constructor arguments are plain hyper-parameters,
``fit`` learns from a contact trace or simulates a scenario, and fitted state
lives in trailing-underscore attributes.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import analytic
from ._validation import ConfigError, check_time_grid
from .engine import AttackConfig, MonteCarloSummary, simulate_timelines
from .mobility import ContactTrace, estimate_pairwise_meeting_rate


def _as_trace(X, n_nodes=None, duration_h=None):
    if isinstance(X, ContactTrace):
        return X
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ConfigError("X must be a ContactTrace or an (n, 4) array of t_start, t_end, u, v")
    if n_nodes is None or duration_h is None:
        raise ConfigError("n_nodes and duration_h are required for array input")
    lo = np.minimum(arr[:, 2], arr[:, 3]).astype(np.int64)
    hi = np.maximum(arr[:, 2], arr[:, 3]).astype(np.int64)
    order = np.lexsort((hi, lo, arr[:, 0]))
    return ContactTrace(arr[order, 0], arr[order, 1], lo[order], hi[order],
                        n_nodes=n_nodes, duration_h=duration_h).validate()


class MeetingRateEstimator(BaseEstimator):
    """Empirical pairwise meeting rate of a contact trace."""

    def __init__(self, n_nodes=None, duration_h=None):
        self.n_nodes = n_nodes
        self.duration_h = duration_h

    def fit(self, X, y=None):
        trace = _as_trace(X, self.n_nodes, self.duration_h)
        est = estimate_pairwise_meeting_rate(trace)
        self.rate_ = est.rate
        self.n_contacts_ = est.n_contacts
        self.n_pairs_ = est.n_pairs
        self.mean_inter_meeting_h_ = est.mean_inter_meeting_h
        self.confidence_interval_ = est.confidence_interval()
        self.n_nodes_ = trace.n_nodes
        return self

    def predict(self, t):
        """Probability that a given pair has met within ``t`` hours."""
        check_is_fitted(self, "rate_")
        t = np.asarray(t, dtype=float)
        return 1.0 - np.exp(-self.rate_ * t)


class EpidemicModel(BaseEstimator):
    """Mean-field target-hit and risk curves.

    With ``beta=None`` the pairwise rate is learnt from a contact trace passed
    to :meth:`fit`; otherwise ``fit`` needs no data.
    """

    def __init__(self, n_nodes=100, beta=None, gamma=0.0, initial_infected=1, model="SIR",
                 step=analytic.DEFAULT_STEP_H):
        self.n_nodes = n_nodes
        self.beta = beta
        self.gamma = gamma
        self.initial_infected = initial_infected
        self.model = model
        self.step = step

    def fit(self, X=None, y=None):
        beta = self.beta
        n = self.n_nodes
        if beta is None:
            if X is None:
                raise ConfigError("beta is None, so fit needs a contact trace")
            rate = MeetingRateEstimator().fit(X)
            beta = rate.rate_
            n = rate.n_nodes_ if n is None else n
        self.params_ = analytic.EpidemicParams(N=n, beta=float(beta), gamma=float(self.gamma),
                                               I0=int(self.initial_infected))
        return self

    def predict(self, t):
        """Target-hit probability at each time in ``t``."""
        check_is_fitted(self, "params_")
        return analytic.target_success_cdf(self.params_, t, self.model, self.step)

    def predict_risk(self, t):
        check_is_fitted(self, "params_")
        return analytic.expected_risk(self.params_, t, self.model, self.step)

    def transform(self, t):
        """Columns ``t, P(t), risk(t)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.column_stack([t, np.atleast_1d(self.predict(t)), np.atleast_1d(self.predict_risk(t))])

    def optimal_timeout(self, reliability):
        check_is_fitted(self, "params_")
        return analytic.optimal_timeout(self.params_, reliability, self.model, self.step)


class AttackSimulator(BaseEstimator):
    """Monte Carlo attack trials, read off at any timeout after one fit.

    ``fit`` simulates every trial without a timeout up to the scenario
    horizon (or ``max_timeout_h`` if given).  ``predict`` and
    ``predict_risk`` then evaluate the coupled trials at arbitrary timeouts.
    """

    def __init__(self, seeds=(0,), target=None, n_random_seeds=None, p_prox=1.0, p_social=0.0,
                 patch=None, trials=1000, master_seed=0, max_timeout_h=None, n_jobs=None):
        self.seeds = seeds
        self.target = target
        self.n_random_seeds = n_random_seeds
        self.p_prox = p_prox
        self.p_social = p_social
        self.patch = patch
        self.trials = trials
        self.master_seed = master_seed
        self.max_timeout_h = max_timeout_h
        self.n_jobs = n_jobs

    def _config(self):
        return AttackConfig(seeds=tuple(self.seeds), target=self.target, T_G_h=math.inf,
                            p_prox=self.p_prox, p_social=self.p_social,
                            n_random_seeds=self.n_random_seeds, patch=self.patch)

    def fit(self, X, y=None):
        """``X`` is an :class:`ExposureStream` or a scenario object."""
        t_stop = math.inf if self.max_timeout_h is None else float(self.max_timeout_h)
        self.timelines_ = simulate_timelines(X, self._config(), self.trials, self.master_seed,
                                             t_stop=t_stop, n_jobs=self.n_jobs)
        self.hit_times_ = np.array([tl.t_hit for tl in self.timelines_])
        self.n_nodes_ = X.n_nodes
        return self

    def summarize(self, T_G_h, keep_records=False) -> MonteCarloSummary:
        check_is_fitted(self, "timelines_")
        return MonteCarloSummary.from_outcomes((tl.outcome(T_G_h) for tl in self.timelines_),
                                               T_G_h=T_G_h, keep_records=keep_records)

    def predict(self, tg):
        """Empirical success rate at each timeout."""
        check_is_fitted(self, "timelines_")
        grid = check_time_grid(np.atleast_1d(tg), "tg", strictly_increasing=False)
        return np.array([np.mean(self.hit_times_ <= g) for g in grid])

    def predict_risk(self, tg):
        """Mean exposure (stopped at the target hit) at each timeout."""
        grid = check_time_grid(np.atleast_1d(tg), "tg", strictly_increasing=False)
        return np.array([self.summarize(g).mean_risk for g in grid])

    def score(self, X=None, y=None, reliability=0.9):
        """Negative mean risk at the smallest timeout reaching ``reliability``."""
        check_is_fitted(self, "timelines_")
        hits = np.sort(self.hit_times_)
        need = math.ceil(round(reliability * len(hits), 9))
        if need == 0:
            return 0.0
        tg = hits[need - 1]
        if not math.isfinite(tg):
            return -math.inf
        return -self.summarize(tg).mean_risk
