"""Mean-field SI / SIS / SIR models with a single designated target.

``beta`` is the pairwise rate, so the aggregate growth rate of an SI outbreak
is ``Lambda = beta * N``.  The probability that the target has been reached by
time t follows ``dP/dt = beta * I(t) * (1 - P)``: the target is met by each
infected node at the pairwise rate.  Risk is the time integral of ``I / N``.

For SI (``gamma == 0``) everything has a closed form; otherwise the ODE is
integrated with fixed-step RK4.  The target counts as one of the N nodes.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from ._validation import (
    ConfigError,
    InfeasibleError,
    check_count,
    check_nonnegative,
    check_positive,
)

DEFAULT_STEP_H = 0.01


class Model(str, enum.Enum):
    SI = "SI"
    SIS = "SIS"
    SIR = "SIR"


@dataclass(frozen=True)
class EpidemicParams:
    N: int
    beta: float
    gamma: float = 0.0
    I0: int = 1

    def __post_init__(self):
        check_count(self.N, "N", minimum=2)
        check_nonnegative(self.beta, "beta")
        check_nonnegative(self.gamma, "gamma")
        check_count(self.I0, "I0", minimum=1)
        if self.I0 >= self.N:
            raise ConfigError("I0 must be < N")

    @classmethod
    def from_aggregate_rate(cls, N, Lambda, gamma=0.0, I0=1):
        return cls(N=N, beta=Lambda / N, gamma=gamma, I0=I0)

    @property
    def Lambda(self):
        return self.beta * self.N


@dataclass
class OdeSolution:
    t: np.ndarray
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    P: np.ndarray
    area: np.ndarray  # running integral of I
    model: Model
    step: float
    method: str = "rk4"

    def to_csv(self, dest=None, comment=None):
        buf = io.StringIO()
        if comment:
            for line in comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "S", "I", "R", "P"))
        for row in zip(self.t.tolist(), self.S.tolist(), self.I.tolist(),
                       self.R.tolist(), self.P.tolist()):
            w.writerow([repr(x) for x in row])
        text = buf.getvalue()
        if dest is None:
            return text
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return None


def _times(t):
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ConfigError("time must be >= 0")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def si_infected_closed_form(params: EpidemicParams, t):
    """Logistic solution ``N*I0 / (I0 + (N - I0) * exp(-Lambda t))``."""
    if params.gamma != 0:
        raise ConfigError("closed form requires gamma == 0")
    t = _times(t)
    N, I0 = params.N, params.I0
    return _out(N * I0 / (I0 + (N - I0) * np.exp(-params.Lambda * t)))


def _rhs(model, beta, gamma):
    def f(y):
        S, I, R, P, _ = y
        inf = beta * S * I
        if model is Model.SI:
            dS, dI, dR = -inf, inf, 0.0
        elif model is Model.SIS:
            dS, dI, dR = -inf + gamma * I, inf - gamma * I, 0.0
        else:
            dS, dI, dR = -inf, inf - gamma * I, gamma * I
        return np.array([dS, dI, dR, beta * I * (1.0 - P), I])
    return f


def solve_epidemic_ode(params: EpidemicParams, model="SI", horizon=50.0, step=DEFAULT_STEP_H):
    """Integrate the chosen model with fixed-step RK4 on ``[0, horizon]``.

    The last step is shortened if ``horizon`` is not a multiple of ``step``.
    """
    model = Model(model)
    horizon = check_positive(horizon, "horizon")
    step = check_positive(step, "step")
    if step > horizon:
        raise ConfigError("step must not exceed horizon")
    if model is Model.SI and params.gamma != 0:
        raise ConfigError("the SI model has no recovery; use gamma == 0")
    f = _rhs(model, params.beta, params.gamma)
    n_steps = int(math.ceil(horizon / step - 1e-9))
    t = np.minimum(np.arange(n_steps + 1) * step, horizon)
    y = np.empty((n_steps + 1, 5))
    y[0] = (params.N - params.I0, params.I0, 0.0, 0.0, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            h = t[k + 1] - t[k]
            yk = y[k]
            k1 = f(yk)
            k2 = f(yk + 0.5 * h * k1)
            k3 = f(yk + 0.5 * h * k2)
            k4 = f(yk + h * k3)
            y[k + 1] = yk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(y[k + 1])):
                raise FloatingPointError(f"non-finite state at t={t[k + 1]:g}: {y[k + 1]}")
    return OdeSolution(t=t, S=y[:, 0], I=y[:, 1], R=y[:, 2], P=y[:, 3], area=y[:, 4],
                       model=model, step=step)


def sis_steady_state(params: EpidemicParams):
    """Endemic level ``max(0, N - gamma/beta)``."""
    if params.beta == 0:
        return 0.0
    return max(0.0, params.N - params.gamma / params.beta)


def _recovery_model(model):
    model = Model(model)
    if model is Model.SI:
        raise ConfigError("gamma > 0 needs the SIS or SIR model")
    return model


def target_success_cdf(params: EpidemicParams, t, model="SIR", step=DEFAULT_STEP_H):
    """Probability that the target is infected by time ``t``.

    Closed form ``1 - N / ((N - I0) + I0 * exp(Lambda t))`` when gamma is 0;
    otherwise read from the ODE (``model`` selects SIS or SIR).
    """
    t = _times(t)
    if params.gamma == 0:
        N, I0 = params.N, params.I0
        e = np.exp(-params.Lambda * t)
        return _out(1.0 - N * e / ((N - I0) * e + I0))
    tmax = float(np.max(t)) if t.size else 0.0
    if tmax == 0:
        return _out(np.zeros_like(t))
    sol = solve_epidemic_ode(params, _recovery_model(model), max(tmax, step), step)
    return _out(np.interp(t, sol.t, sol.P))


def expected_risk(params: EpidemicParams, T, model="SIR", step=DEFAULT_STEP_H):
    """Normalised exposure ``(1/N) * integral_0^T I(t) dt`` in hours.

    No early stop at the target hit: this is the exposure of an outbreak that
    runs until the timeout.
    """
    T = _times(T)
    N, I0 = params.N, params.I0
    if params.beta == 0 and params.gamma == 0:
        return _out(I0 * T / N)
    if params.gamma == 0:
        lam = params.Lambda
        return _out(T + np.log((I0 + (N - I0) * np.exp(-lam * T)) / N) / lam)
    tmax = float(np.max(T)) if T.size else 0.0
    if tmax == 0:
        return _out(np.zeros_like(T))
    sol = solve_epidemic_ode(params, _recovery_model(model), max(tmax, step), step)
    return _out(np.interp(T, sol.t, sol.area) / N)


def optimal_timeout(params: EpidemicParams, reliability, model="SIR", step=DEFAULT_STEP_H,
                    max_horizon=1e4):
    """Smallest timeout whose target-hit probability reaches ``reliability``.

    Risk grows with the timeout, so this is also the least-exposure timeout
    meeting the reliability constraint.
    """
    rho = float(reliability)
    if not 0 <= rho < 1:
        raise ConfigError("reliability must lie in [0, 1)")
    if rho == 0:
        return 0.0
    if params.beta == 0:
        raise InfeasibleError("beta == 0: the target is never reached")
    N, I0 = params.N, params.I0
    if params.gamma == 0:
        return math.log((N / (1 - rho) - (N - I0)) / I0) / params.Lambda
    model = _recovery_model(model)
    horizon = max(10.0 / params.Lambda, 10 * step)
    while True:
        sol = solve_epidemic_ode(params, model, horizon, step)
        hit = np.flatnonzero(sol.P >= rho)
        if hit.size:
            k = int(hit[0])
            if k == 0:
                return 0.0
            p0, p1 = sol.P[k - 1], sol.P[k]
            return float(sol.t[k - 1] + (rho - p0) / (p1 - p0) * (sol.t[k] - sol.t[k - 1]))
        if sol.I[-1] < 1e-9 * N or horizon >= max_horizon:
            raise InfeasibleError(
                f"reliability {rho} unreachable; success saturates at {sol.P[-1]:.6g}")
        horizon *= 2
