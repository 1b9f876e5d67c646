"""Shared fixtures and independent reference oracles."""
import math
from collections import Counter

import numpy as np
import pytest
from scipy.linalg import expm

from epidemica import _random
from epidemica.engine import AttackConfig, Channel, ExposureStream

P = Channel.PROXIMITY
S = Channel.SOCIAL


@pytest.fixture
def three_node_stream():
    """0 -> 1 at t=1, then 1 -> 2 at t=2."""
    return ExposureStream.from_events([(1.0, 0, 1, P), (2.0, 1, 2, P)], n_nodes=3)


@pytest.fixture
def three_node_cfg():
    return AttackConfig(seeds=(0,), target=2, T_G_h=3.0, p_prox=1.0)


def si_target_chain(N, beta, I0=1):
    """Generator of the finite-population SI chain seen from a random target.

    States 0..N-1-I0 index the infected count k = I0 + i with the target still
    susceptible; the last state is "target hit".  From k, the next infection
    lands on one of the N-k susceptibles uniformly, and one of them is the
    target.
    """
    ks = np.arange(I0, N)
    n = len(ks) + 1
    Q = np.zeros((n, n))
    for i, k in enumerate(ks):
        total = beta * k * (N - k)
        to_target = beta * k
        Q[i, n - 1] = to_target
        if i + 1 < n - 1:
            Q[i, i + 1] = total - to_target
        Q[i, i] = -total
    return Q, ks


def exact_si_success(N, beta, t, I0=1):
    Q, _ = si_target_chain(N, beta, I0)
    p0 = np.zeros(len(Q))
    p0[0] = 1.0
    return float((p0 @ expm(Q * t))[-1])


def exact_si_stopped_risk(N, beta, T, I0=1):
    """E[(1/N) * integral of I(s) ds over [0, min(t_hit, T)]]."""
    Q, ks = si_target_chain(N, beta, I0)
    n = len(Q)
    w = np.append(ks / N, 0.0)
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = Q
    M[:n, n] = w
    E = expm(M * T)
    return float(E[0, n])


def naive_propagate(events, n_nodes, seeds, target, T_G, probs, draws, stop_at_hit=True):
    """Textbook re-implementation used as an oracle for the engine.

    ``events`` are (t, src, dst, channel) in processing order and ``draws``
    the matching uniforms.  Returns (success, t_hit, risk); the risk is cut
    at the target hit unless ``stop_at_hit`` is False.
    """
    infected_at = {s: 0.0 for s in seeds}
    t_hit = 0.0 if target in seeds else None
    for (t, a, b, ch), u in zip(events, draws):
        if t > T_G or (stop_at_hit and t_hit is not None):
            break
        if a in infected_at and b not in infected_at and u < probs[ch]:
            infected_at[b] = t
            if b == target and t_hit is None:
                t_hit = t
    stop = T_G if t_hit is None or not stop_at_hit else min(t_hit, T_G)
    risk = sum(stop - ti for ti in infected_at.values() if ti <= stop) / n_nodes
    return t_hit is not None, t_hit, risk


def wilson(k, n, z=1.959964):
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return centre - half, centre + half


def brute_force_opportunities(trace, graph, slot, horizon):
    """Enumerate opportunities straight from the cadence rules."""
    out = Counter()
    if trace is not None:
        for a, b, u, v in trace.events:
            j = 0
            while True:
                t = a + j * slot
                if j > 0 and not t < b:
                    break
                if t <= horizon:
                    out[(t, u, v, 0)] += 1
                    out[(t, v, u, 0)] += 1
                j += 1
    if graph is not None:
        for u, v in graph.edges.tolist():
            j = 1
            while j * slot <= horizon + 1e-9:
                out[(j * slot, u, v, 1)] += 1
                out[(j * slot, v, u, 1)] += 1
                j += 1
    return out


def brute_force_search(stream, cfg, ps, pl, budget, trials, master_seed, metric):
    """Evaluate every grid cell with the naive propagator and pick the best by hand."""
    events = list(zip(stream.t.tolist(), stream.src.tolist(), stream.dst.tolist(),
                      stream.channel.tolist()))
    cells = []
    for a in ps:
        for b in pl:
            succ, risk = 0, 0.0
            for trial in range(trials):
                draws = _random.uniforms(master_seed, trial, stream.event_key)
                seeds, target = cfg.roles(stream.n_nodes, master_seed, trial)
                ok, _, r = naive_propagate(events, stream.n_nodes, set(seeds), target,
                                           min(cfg.T_G_h, stream.horizon_h), (b, a), draws,
                                           stop_at_hit=metric == "stopped")
                succ += ok
                risk += r
            cells.append((a, b, succ / trials, risk / trials))
    feasible = [c for c in cells if c[3] <= budget + 1e-12]
    best = min(feasible, key=lambda c: (-c[2], c[3], c[0], c[1])) if feasible else None
    return cells, best
