import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from epidemica._validation import ConfigError
from epidemica.analytic import EpidemicParams, optimal_timeout, target_success_cdf
from epidemica.engine import AttackConfig, run_monte_carlo
from epidemica.estimators import AttackSimulator, EpidemicModel, MeetingRateEstimator
from epidemica.mobility import estimate_pairwise_meeting_rate, poisson_contact_trace
from epidemica.scenarios import PoissonMixingScenario


def test_meeting_rate_estimator_matches_function():
    trace = poisson_contact_trace(8, 0.2, 200.0, rng_seed=2)
    est = MeetingRateEstimator().fit(trace)
    assert est.rate_ == estimate_pairwise_meeting_rate(trace).rate
    assert est.predict(0.0) == 0.0
    assert est.predict([1.0])[0] == pytest.approx(1 - math.exp(-est.rate_))


def test_meeting_rate_estimator_array_input():
    trace = poisson_contact_trace(6, 0.3, 50.0, rng_seed=1)
    X = np.column_stack([trace.t_start, trace.t_end, trace.v, trace.u])
    est = MeetingRateEstimator(n_nodes=6, duration_h=50.0).fit(X)
    assert est.rate_ == pytest.approx(estimate_pairwise_meeting_rate(trace).rate)
    with pytest.raises(ConfigError):
        MeetingRateEstimator().fit(X)


def test_epidemic_model():
    m = EpidemicModel(n_nodes=100, beta=0.0037043).fit()
    p = EpidemicParams(100, 0.0037043)
    assert m.predict(10.0) == pytest.approx(target_success_cdf(p, 10.0))
    assert m.optimal_timeout(0.9) == pytest.approx(optimal_timeout(p, 0.9))
    table = m.transform([0, 10, 20])
    assert table.shape == (3, 3)
    assert clone(m).get_params() == m.get_params()
    with pytest.raises(NotFittedError):
        EpidemicModel().predict(1.0)


def test_epidemic_model_learns_beta_from_trace():
    trace = poisson_contact_trace(10, 0.25, 100.0, rng_seed=0)
    m = EpidemicModel(n_nodes=None, beta=None).fit(trace)
    assert m.params_.N == 10
    assert m.params_.beta == estimate_pairwise_meeting_rate(trace).rate


def test_attack_simulator_agrees_with_monte_carlo():
    scen = PoissonMixingScenario(30, 0.02, 30.0)
    sim = AttackSimulator(target=None, p_prox=0.8, trials=200, master_seed=3).fit(scen)
    for tg in (5.0, 15.0, 30.0):
        mc = run_monte_carlo(scen, AttackConfig(target=None, p_prox=0.8, T_G_h=tg), 200, 3)
        s = sim.summarize(tg)
        assert s.as_dict() == mc.as_dict()
    rates = sim.predict([5.0, 15.0, 30.0])
    assert np.all(np.diff(rates) >= 0)
    assert sim.score(reliability=0.0) == 0.0
    assert sim.score(reliability=0.5) <= 0.0
