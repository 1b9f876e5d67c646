"""Searching the success/exposure tradeoff.

All searches reuse the same trial ids and master seed across the points they
compare, so differences between points are exact per trial rather than noise
between independent samples.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ._validation import ConfigError, check_count, check_probability, check_time_grid
from .engine import AttackConfig, MonteCarloSummary, run_monte_carlo, simulate_outcomes

TRADEOFF_HEADER = ("tg", "success", "wilson_lo", "wilson_hi", "risk")
CONFIG_HEADER = ("ps", "pl", "success", "risk", "feasible")


def _write(rows, header, dest, comment):
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if dest is None:
        return text
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return None


@dataclass
class TradeoffPoint:
    T_G_h: float
    success_rate: float
    wilson_lo: float
    wilson_hi: float
    mean_risk: float
    mean_ever_infected_fraction: float
    mean_risk_to_timeout: float


def tradeoff_curve(scenario, cfg: AttackConfig, tg_grid, trials, master_seed=0, n_jobs=None):
    """Success and risk for each timeout in ``tg_grid`` from one set of coupled trials."""
    grid = check_time_grid(tg_grid, "tg_grid").tolist()
    rows = simulate_outcomes(scenario, cfg, trials, master_seed, grid, n_jobs=n_jobs)
    points = []
    for j, tg in enumerate(grid):
        s = MonteCarloSummary.from_outcomes((r[j] for r in rows), T_G_h=tg)
        points.append(TradeoffPoint(tg, s.success_rate, s.wilson_lo, s.wilson_hi, s.mean_risk,
                                    s.mean_ever_infected_fraction, s.mean_risk_to_timeout))
    return points


def tradeoff_to_csv(points, dest=None, comment=None):
    rows = [(repr(float(p.T_G_h)), repr(p.success_rate), repr(p.wilson_lo), repr(p.wilson_hi),
             repr(p.mean_risk)) for p in points]
    return _write(rows, TRADEOFF_HEADER, dest, comment)


@dataclass
class MinTimeoutResult:
    reliability: float
    T_G_h: float | None
    attainable: bool
    achieved_success: float  # success with no timeout, over the scenario horizon
    trials: int
    hit_times: np.ndarray  # sorted, inf for trials that never reach the target


def min_timeout_mc(scenario, cfg: AttackConfig, reliability, trials, master_seed=0, n_jobs=None):
    """Smallest timeout whose empirical success reaches ``reliability``.

    Runs every trial once without a timeout and takes the empirical quantile
    of the target-hit times (misses count as +inf).  Under coupling the
    success of timeout T is exactly the fraction of hit times <= T.
    """
    rho = float(reliability)
    if not 0 <= rho < 1:
        raise ConfigError("reliability must lie in [0, 1)")
    trials = check_count(trials, "trials", minimum=1)
    rows = simulate_outcomes(scenario, cfg.replace(T_G_h=math.inf), trials, master_seed,
                             [math.inf], n_jobs=n_jobs)
    hits = np.sort([math.inf if r[0].t_hit_h is None else r[0].t_hit_h for r in rows])
    achieved = float(np.isfinite(hits).mean())
    if rho == 0:
        return MinTimeoutResult(rho, 0.0, True, achieved, trials, hits)
    need = math.ceil(round(rho * trials, 9))
    value = float(hits[need - 1])
    if math.isinf(value):
        return MinTimeoutResult(rho, None, False, achieved, trials, hits)
    return MinTimeoutResult(rho, value, True, achieved, trials, hits)


RISK_METRICS = ("to_timeout", "stopped")


@dataclass
class ConfigCell:
    p_s: float
    p_l: float
    success_rate: float
    mean_risk: float  # in the search's risk metric
    feasible: bool
    summary: MonteCarloSummary


@dataclass
class ConfigSearchResult:
    cells: list
    best: ConfigCell | None
    risk_budget: float
    risk_metric: str = "to_timeout"
    risk_units: str = "mean normalised risk, hours"

    @property
    def feasible(self):
        return [c for c in self.cells if c.feasible]

    def surface(self, attr="success_rate"):
        """Grid of ``attr`` indexed ``[i_ps, i_pl]``."""
        ps = sorted({c.p_s for c in self.cells})
        pl = sorted({c.p_l for c in self.cells})
        out = np.full((len(ps), len(pl)), np.nan)
        for c in self.cells:
            out[ps.index(c.p_s), pl.index(c.p_l)] = getattr(c, attr)
        return out

    def to_csv(self, dest=None, comment=None):
        rows = [(repr(c.p_s), repr(c.p_l), repr(c.success_rate), repr(c.mean_risk), int(c.feasible))
                for c in self.cells]
        return _write(rows, CONFIG_HEADER, dest, comment)


def _choose(cells):
    feasible = [c for c in cells if c.feasible]
    if not feasible:
        return None
    return min(feasible, key=lambda c: (-c.success_rate, c.mean_risk, c.p_s, c.p_l))


def constrained_config_search(scenario, cfg: AttackConfig, ps_grid, pl_grid, risk_budget,
                              trials, master_seed=0, n_jobs=None, risk_metric="to_timeout"):
    """Best (p_s, p_l) cell whose mean risk stays within ``risk_budget``.

    Every cell runs the same trial ids under the same master seed.  Ties on
    success go to lower risk, then to the lexicographically smaller (p_s, p_l).
    An empty feasible set gives ``best=None``.

    ``risk_metric="to_timeout"`` (default) budgets the exposure accumulated
    until the timeout fires, which is exactly non-decreasing in both
    probabilities.  ``"stopped"`` budgets the exposure cut at the target hit;
    that one can shrink as the probabilities grow, because hits come sooner.
    """
    if risk_metric not in RISK_METRICS:
        raise ConfigError(f"risk_metric must be one of {RISK_METRICS}")
    ps = [check_probability(p, "p_s") for p in ps_grid]
    pl = [check_probability(p, "p_l") for p in pl_grid]
    if not ps or not pl:
        raise ConfigError("probability grids must be non-empty")
    budget = float(risk_budget)
    if math.isnan(budget) or budget < 0:
        raise ConfigError("risk_budget must be >= 0 (or inf)")
    cells = []
    for a in ps:
        for b in pl:
            s = run_monte_carlo(scenario, cfg.replace(p_social=a, p_prox=b), trials,
                                master_seed, n_jobs=n_jobs)
            risk = s.mean_risk_to_timeout if risk_metric == "to_timeout" else s.mean_risk
            cells.append(ConfigCell(a, b, s.success_rate, risk, risk <= budget, s))
    return ConfigSearchResult(cells, _choose(cells), budget, risk_metric)
