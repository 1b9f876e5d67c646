"""Propagation of a targeted infection over a stream of transmission chances.

The engine never looks at positions or graphs.  Its input is an
:class:`ExposureStream`: a time-sorted list of directed opportunities
``(t, src, dst, channel, event_key)``.  An opportunity infects ``dst`` when
``src`` is infected, ``dst`` is susceptible, ``t <= T_G`` and the counter-based
draw for ``event_key`` falls below the channel's probability.

A trial is first simulated into a :class:`Timeline` (per-node infection and
removal times up to some stop time) and outcomes for any timeout not beyond
that stop time are read off it.  Since the timeout only truncates the event
sequence, outcomes read from one timeline for several timeouts are exactly
those of separate runs.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import _random
from ._validation import (
    ConfigError,
    DataError,
    check_count,
    check_nonnegative,
    check_probability,
    check_seed,
)

SUSCEPTIBLE, INFECTED, REMOVED = 0, 1, 2

STREAM_HEADER = ("t", "src", "dst", "channel", "event_key")
RECORD_HEADER = ("trial_id", "success", "t_hit", "risk", "ever_infected")
SUMMARY_FIELDS = ("trials", "success_rate", "wilson_lo", "wilson_hi", "mean_risk",
                  "mean_ever_infected_fraction")


class Channel(enum.IntEnum):
    PROXIMITY = 0
    SOCIAL = 1


# event_key layout: bit 63 is the channel.  Proximity keys are
# (contact index << 23) | (slot << 1) | direction; social keys are
# (u << 43) | (v << 23) | (slot << 1) | direction with u < v.  Social keys
# depend on node ids, not on edge order, so adding an edge leaves the keys of
# existing opportunities untouched.
_CHANNEL_BIT = np.uint64(1 << 63)
SLOT_BITS = 22
MAX_SLOTS = 1 << SLOT_BITS
NODE_BITS = 20
MAX_CONTACTS = 1 << 40


def proximity_keys(contact_index, slot, direction):
    contact_index = np.asarray(contact_index, dtype=np.uint64)
    slot = np.asarray(slot, dtype=np.uint64)
    direction = np.asarray(direction, dtype=np.uint64)
    return (contact_index << np.uint64(SLOT_BITS + 1)) | (slot << np.uint64(1)) | direction


def social_keys(u, v, slot, direction):
    u = np.asarray(u, dtype=np.uint64)
    v = np.asarray(v, dtype=np.uint64)
    slot = np.asarray(slot, dtype=np.uint64)
    direction = np.asarray(direction, dtype=np.uint64)
    return (_CHANNEL_BIT | (u << np.uint64(NODE_BITS + SLOT_BITS + 1))
            | (v << np.uint64(SLOT_BITS + 1)) | (slot << np.uint64(1)) | direction)


@dataclass
class ExposureStream:
    """Directed, channel-tagged transmission opportunities sorted by time.

    ``horizon_h`` is the end of the observation window.  It bounds every
    trial; an unbounded stream (``inf``) lets the timeout alone stop a trial.
    """

    t: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    channel: np.ndarray
    event_key: np.ndarray
    n_nodes: int
    horizon_h: float = math.inf

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        self.channel = np.asarray(self.channel, dtype=np.int8).reshape(-1)
        self.event_key = np.asarray(self.event_key, dtype=np.uint64).reshape(-1)
        n = len(self.t)
        if not (len(self.src) == len(self.dst) == len(self.channel) == len(self.event_key) == n):
            raise DataError("exposure stream columns differ in length")
        self._lists = None

    @classmethod
    def empty(cls, n_nodes, horizon_h=math.inf):
        return cls([], [], [], [], [], n_nodes=n_nodes, horizon_h=horizon_h)

    @classmethod
    def from_events(cls, events, n_nodes, horizon_h=math.inf):
        """Build from ``(t, src, dst, channel[, event_key])`` tuples.

        Missing keys default to the row position; rows are sorted by (t, key).
        """
        rows = [tuple(e) if len(e) == 5 else (*e, i) for i, e in enumerate(events)]
        cols = list(zip(*rows)) if rows else [[], [], [], [], []]
        t = np.asarray(cols[0], dtype=np.float64)
        key = np.asarray(cols[4], dtype=np.uint64)
        order = np.lexsort((key, t))
        ch = np.asarray([int(Channel(c)) for c in cols[3]], dtype=np.int8)
        return cls(t[order], np.asarray(cols[1])[order] if rows else [],
                   np.asarray(cols[2])[order] if rows else [], ch[order] if rows else [],
                   key[order], n_nodes=n_nodes, horizon_h=horizon_h)

    def __len__(self):
        return len(self.t)

    def validate(self) -> "ExposureStream":
        check_count(self.n_nodes, "n_nodes", minimum=1)
        if np.isnan(self.horizon_h) or self.horizon_h < 0:
            raise DataError("stream horizon must be >= 0")
        if len(self) == 0:
            return self
        if np.any(np.isnan(self.t)) or np.any(np.diff(self.t) < 0):
            raise DataError("exposure stream is not sorted by time")
        if self.t[0] < 0 or self.t[-1] > self.horizon_h:
            raise DataError("exposure event outside [0, horizon_h]")
        lo = min(self.src.min(), self.dst.min())
        hi = max(self.src.max(), self.dst.max())
        if lo < 0 or hi >= self.n_nodes:
            raise DataError(f"node id out of range for n_nodes={self.n_nodes}")
        if np.any(self.src == self.dst):
            raise DataError("exposure event with src == dst")
        if not np.all(np.isin(self.channel, (Channel.PROXIMITY, Channel.SOCIAL))):
            raise DataError("unknown channel code")
        if np.unique(self.event_key).size != len(self):
            raise DataError("event keys are not unique")
        return self

    def restrict(self, channel) -> "ExposureStream":
        """Sub-stream holding a single channel (keys unchanged)."""
        m = self.channel == int(Channel(channel))
        return ExposureStream(self.t[m], self.src[m], self.dst[m], self.channel[m],
                              self.event_key[m], n_nodes=self.n_nodes, horizon_h=self.horizon_h)

    def as_lists(self):
        if self._lists is None:
            self._lists = (self.t.tolist(), self.src.tolist(), self.dst.tolist(),
                           self.channel.tolist())
        return self._lists

    def to_csv(self, dest=None, comment=None):
        buf = io.StringIO()
        if comment:
            for line in comment.splitlines():
                buf.write(f"# {line}\n")
        buf.write(f"# n_nodes={self.n_nodes},horizon_h={float(self.horizon_h)!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STREAM_HEADER)
        names = {int(c): c.name.lower() for c in Channel}
        for t, s, d, c, k in zip(self.t.tolist(), self.src.tolist(), self.dst.tolist(),
                                 self.channel.tolist(), self.event_key.tolist()):
            w.writerow((repr(t), s, d, names[c], k))
        return _emit(buf.getvalue(), dest)


def _emit(text, dest):
    if dest is None:
        return text
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return None


@dataclass(frozen=True)
class PatchConfig:
    """Antipacket-style cure: carriers remove what they meet from ``activation_time_h``."""

    activation_time_h: float = 0.0
    initial_patched: tuple = ()
    p_patch: float = 1.0

    def __post_init__(self):
        check_nonnegative(self.activation_time_h, "activation_time_h", allow_inf=True)
        check_probability(self.p_patch, "p_patch")
        object.__setattr__(self, "initial_patched", tuple(int(i) for i in self.initial_patched))


@dataclass(frozen=True)
class AttackConfig:
    """Who starts infected, who is targeted, and how infection spreads.

    ``n_random_seeds`` switches the seed rule from the fixed ``seeds`` to a
    random set of that size drawn per trial.  ``target=None`` draws a random
    target outside the seed set per trial.
    """

    seeds: tuple = (0,)
    target: int | None = None
    T_G_h: float = math.inf
    p_prox: float = 1.0
    p_social: float = 0.0
    n_random_seeds: int | None = None
    patch: PatchConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        check_nonnegative(self.T_G_h, "T_G_h", allow_inf=True)
        check_probability(self.p_prox, "p_prox")
        check_probability(self.p_social, "p_social")
        if self.n_random_seeds is not None:
            check_count(self.n_random_seeds, "n_random_seeds", minimum=1)
        elif not self.seeds:
            raise ConfigError("at least one seed is required")
        elif len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seed ids")
        if self.target is not None:
            check_count(self.target, "target")
        if isinstance(self.patch, dict):
            object.__setattr__(self, "patch", PatchConfig(**self.patch))

    def replace(self, **changes) -> "AttackConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return AttackConfig(**d)

    def roles(self, n_nodes, master_seed, trial_id):
        """Seed ids and target id for one trial."""
        rng = None
        if self.n_random_seeds is not None:
            if self.n_random_seeds >= n_nodes:
                raise ConfigError("n_random_seeds must leave room for a target")
            rng = _random.trial_rng(master_seed, trial_id, 0x501E)
            seeds = tuple(sorted(int(s) for s in rng.choice(n_nodes, self.n_random_seeds, replace=False)))
        else:
            seeds = self.seeds
            if max(seeds) >= n_nodes or min(seeds) < 0:
                raise ConfigError(f"seed id out of range for n_nodes={n_nodes}")
        if self.target is None:
            if rng is None:
                rng = _random.trial_rng(master_seed, trial_id, 0x501E)
            seed_set = set(seeds)
            pool = [i for i in range(n_nodes) if i not in seed_set]
            if not pool:
                raise ConfigError("no node left to target")
            target = pool[int(rng.integers(len(pool)))]
        else:
            target = self.target
            if target >= n_nodes:
                raise ConfigError(f"target id out of range for n_nodes={n_nodes}")
        return seeds, target


@dataclass
class TrialOutcome:
    success: bool
    t_hit_h: float | None
    stop_time_h: float
    risk_time_integral: float
    ever_infected: int
    risk_to_timeout: float
    n_nodes: int
    trial_id: int = 0
    infection_log: dict | None = None


@dataclass
class Timeline:
    """Per-node state changes of one trial, simulated up to ``t_stop``.

    ``t_inf``/``t_rem`` are ``inf`` for nodes never infected/removed.
    ``seq`` is the index of the infecting event (-1 for seeds).  ``history``
    holds ``(t, n_S, n_I, n_R)`` after every change when recording is on.
    """

    n_nodes: int
    seeds: tuple
    target: int
    t_inf: np.ndarray
    t_rem: np.ndarray
    seq: np.ndarray
    infected_by: np.ndarray
    t_hit: float
    hit_seq: int
    t_stop: float
    horizon_h: float
    trial_id: int = 0
    history: list | None = None

    def outcome(self, T_G_h, log=False) -> TrialOutcome:
        if T_G_h > self.t_stop and self.t_stop < self.horizon_h:
            raise ValueError("timeline was not simulated far enough for this timeout")
        success = math.isfinite(self.t_hit) and self.t_hit <= T_G_h
        end = min(T_G_h, self.horizon_h)
        stop = min(self.t_hit, end)
        if success:
            member = (self.t_inf < stop) | ((self.t_inf == stop) & (self.seq <= self.hit_seq))
        else:
            member = self.t_inf <= stop
        risk = _occupancy(self.t_inf, self.t_rem, member, stop) / self.n_nodes
        risk_all = _occupancy(self.t_inf, self.t_rem, self.t_inf <= end, end) / self.n_nodes
        infection_log = None
        if log:
            infection_log = {int(i): float(self.t_inf[i]) for i in np.flatnonzero(member)}
        return TrialOutcome(
            success=bool(success),
            t_hit_h=float(self.t_hit) if success else None,
            stop_time_h=float(stop),
            risk_time_integral=float(risk),
            ever_infected=int(member.sum()),
            risk_to_timeout=float(risk_all),
            n_nodes=self.n_nodes,
            trial_id=self.trial_id,
            infection_log=infection_log,
        )


def _occupancy(t_inf, t_rem, member, stop):
    if not member.any():
        return 0.0
    if math.isinf(stop):
        return math.inf
    span = np.minimum(t_rem[member], stop) - t_inf[member]
    return math.fsum(np.maximum(span, 0.0).tolist())


def simulate(stream: ExposureStream, cfg: AttackConfig, seeds, target, t_stop,
             master_seed=0, trial_id=0, record=False, validate=True) -> Timeline:
    """Run the propagation for explicit roles and return the full timeline.

    The trial is not cut at the target hit; :meth:`Timeline.outcome` applies
    that rule.  ``t_stop`` bounds the events processed (and the infection
    window), so outcomes are available for every timeout ``<= t_stop``.
    """
    if validate:
        stream.validate()
    n = stream.n_nodes
    seeds = tuple(int(s) for s in seeds)
    target = int(target)
    for i in (*seeds, target):
        if not 0 <= i < n:
            raise DataError(f"node id {i} out of range for n_nodes={n}")
    t_stop = min(float(t_stop), stream.horizon_h)

    ts, src, dst, ch = stream.as_lists()
    m = int(np.searchsorted(stream.t, t_stop, side="right"))
    probs = (cfg.p_prox, cfg.p_social)
    draws = _random.uniforms(master_seed, trial_id, stream.event_key[:m]).tolist()

    patch = cfg.patch
    act = math.inf
    if patch is not None:
        act = patch.activation_time_h
        patch_draws = _random.uniforms(master_seed, trial_id, stream.event_key[:m],
                                       domain=_random.PATCH).tolist()
        for i in patch.initial_patched:
            if not 0 <= i < n:
                raise DataError(f"patched id {i} out of range for n_nodes={n}")
    p_patch = patch.p_patch if patch is not None else 0.0

    state = [SUSCEPTIBLE] * n
    t_inf = [math.inf] * n
    t_rem = [math.inf] * n
    seq = [m + 1] * n
    by = [-1] * n
    for s in seeds:
        state[s] = INFECTED
        t_inf[s] = 0.0
        seq[s] = -1
    t_hit, hit_seq = (0.0, -1) if target in seeds else (math.inf, m + 1)
    counts = [n - len(seeds), len(seeds), 0]
    history = [(0.0, *counts)] if record else None

    def activate():
        for i in patch.initial_patched:
            if state[i] != REMOVED:
                counts[state[i]] -= 1
                counts[REMOVED] += 1
                if state[i] == INFECTED:
                    t_rem[i] = act
                state[i] = REMOVED
        if record:
            history.append((act, *counts))

    activated = False
    for k in range(m):
        t = ts[k]
        if not activated and t >= act:
            activate()
            activated = True
        a = state[src[k]]
        if a == INFECTED:
            b = dst[k]
            if state[b] == SUSCEPTIBLE and draws[k] < probs[ch[k]]:
                state[b] = INFECTED
                t_inf[b] = t
                seq[b] = k
                by[b] = src[k]
                counts[SUSCEPTIBLE] -= 1
                counts[INFECTED] += 1
                if b == target and t < t_hit:
                    t_hit, hit_seq = t, k
                if record:
                    history.append((t, *counts))
        elif a == REMOVED and activated:
            b = dst[k]
            sb = state[b]
            if sb != REMOVED and patch_draws[k] < p_patch:
                if sb == INFECTED:
                    t_rem[b] = t
                state[b] = REMOVED
                counts[sb] -= 1
                counts[REMOVED] += 1
                if record:
                    history.append((t, *counts))
    if patch is not None and not activated and act <= t_stop:
        activate()

    return Timeline(
        n_nodes=n, seeds=seeds, target=target,
        t_inf=np.asarray(t_inf), t_rem=np.asarray(t_rem), seq=np.asarray(seq),
        infected_by=np.asarray(by), t_hit=t_hit, hit_seq=hit_seq,
        t_stop=t_stop, horizon_h=stream.horizon_h, history=history,
    )


def run_trial(stream: ExposureStream, cfg: AttackConfig, n_nodes=None, trial_id=0,
              master_seed=0, record=False) -> TrialOutcome:
    """Simulate one attack trial on ``stream`` and summarise it."""
    n = stream.n_nodes if n_nodes is None else check_count(n_nodes, "n_nodes", minimum=1)
    if n < stream.n_nodes:
        raise DataError("n_nodes does not cover the ids in the stream")
    if n != stream.n_nodes:
        stream = ExposureStream(stream.t, stream.src, stream.dst, stream.channel,
                                stream.event_key, n_nodes=n, horizon_h=stream.horizon_h)
    check_seed(master_seed, "master_seed")
    seeds, target = cfg.roles(n, master_seed, trial_id)
    tl = simulate(stream, cfg, seeds, target, cfg.T_G_h, master_seed, trial_id, record=record)
    tl.trial_id = trial_id
    return tl.outcome(cfg.T_G_h, log=record)


# --------------------------------------------------------------------------
# Monte Carlo


def wilson_interval(successes, trials, confidence=0.95):
    """Wilson score interval for a binomial proportion."""
    trials = check_count(trials, "trials", minimum=1)
    successes = check_count(successes, "successes")
    if successes > trials:
        raise ConfigError("successes cannot exceed trials")
    if not 0 < confidence < 1:
        raise ConfigError("confidence must lie in (0, 1)")
    z = float(norm.ppf(0.5 + confidence / 2))
    p = successes / trials
    z2n = z * z / trials
    centre = (p + z2n / 2) / (1 + z2n)
    half = z * math.sqrt(p * (1 - p) / trials + z2n / (4 * trials)) / (1 + z2n)
    lo = 0.0 if successes == 0 else max(0.0, min(p, centre - half))
    hi = 1.0 if successes == trials else min(1.0, max(p, centre + half))
    return lo, hi


@dataclass
class MonteCarloSummary:
    trials: int
    successes: int
    success_rate: float
    wilson_lo: float
    wilson_hi: float
    mean_risk: float
    mean_ever_infected_fraction: float
    mean_risk_to_timeout: float
    T_G_h: float = math.inf
    records: list | None = field(default=None, repr=False)

    @classmethod
    def from_outcomes(cls, outcomes, T_G_h=math.inf, keep_records=False):
        outcomes = list(outcomes)
        if not outcomes:
            raise ConfigError("cannot summarise zero trials")
        n = len(outcomes)
        k = sum(o.success for o in outcomes)
        lo, hi = wilson_interval(k, n)
        return cls(
            trials=n,
            successes=k,
            success_rate=k / n,
            wilson_lo=lo,
            wilson_hi=hi,
            mean_risk=math.fsum(o.risk_time_integral for o in outcomes) / n,
            mean_ever_infected_fraction=math.fsum(o.ever_infected / o.n_nodes for o in outcomes) / n,
            mean_risk_to_timeout=math.fsum(o.risk_to_timeout for o in outcomes) / n,
            T_G_h=T_G_h,
            records=outcomes if keep_records else None,
        )

    def as_dict(self):
        return {name: getattr(self, name) for name in SUMMARY_FIELDS}

    def to_json(self, dest=None, extra=None):
        doc = self.as_dict()
        if extra:
            doc.update(extra)
        return _emit(json.dumps(doc, indent=2, allow_nan=True) + "\n", dest)

    def records_to_csv(self, dest=None, comment=None):
        if self.records is None:
            raise ValueError("summary was built without per-trial records")
        buf = io.StringIO()
        if comment:
            for line in comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for o in self.records:
            w.writerow((o.trial_id, int(o.success), "" if o.t_hit_h is None else repr(o.t_hit_h),
                        repr(o.risk_time_integral), o.ever_infected))
        return _emit(buf.getvalue(), dest)


def thread_count(n_jobs=None):
    """Resolve a worker count; ``None`` reads ``EPIDEMICA_THREADS`` (0 = auto)."""
    if n_jobs is None:
        raw = os.environ.get("EPIDEMICA_THREADS", "1").strip() or "1"
        try:
            n_jobs = int(raw)
        except ValueError:
            raise ConfigError(f"EPIDEMICA_THREADS must be an integer, got {raw!r}") from None
    if n_jobs <= 0:
        n_jobs = os.cpu_count() or 1
    return n_jobs


def _as_scenario(scenario):
    from .scenarios import StreamScenario

    if isinstance(scenario, ExposureStream):
        return StreamScenario(scenario)
    if not hasattr(scenario, "stream"):
        raise ConfigError("scenario must be an ExposureStream or provide stream(master_seed, trial_id)")
    return scenario


def _run_block(scenario, cfg, master_seed, trial_ids, timeouts, t_stop, keep_log):
    out = []
    for trial_id in trial_ids:
        try:
            stream = scenario.stream(master_seed, trial_id)
            seeds, target = cfg.roles(stream.n_nodes, master_seed, trial_id)
            tl = simulate(stream, cfg, seeds, target, t_stop, master_seed, trial_id,
                          validate=trial_id == trial_ids[0] or not scenario.fixed)
        except (ConfigError, DataError) as exc:
            raise type(exc)(f"trial {trial_id}: {exc}") from exc
        tl.trial_id = trial_id
        if timeouts is None:
            out.append(tl)
        else:
            out.append([tl.outcome(tg, log=keep_log) for tg in timeouts])
    return out


def _map_trials(scenario, cfg, trials, master_seed, timeouts, t_stop, n_jobs, keep_log):
    # contiguous blocks reassembled in trial order: identical for any n_jobs
    scenario = _as_scenario(scenario)
    trials = check_count(trials, "trials", minimum=1)
    check_seed(master_seed, "master_seed")
    workers = min(thread_count(n_jobs), trials)
    ids = list(range(trials))
    if workers == 1:
        return _run_block(scenario, cfg, master_seed, ids, timeouts, t_stop, keep_log)
    size = math.ceil(trials / workers)
    blocks = [ids[i:i + size] for i in range(0, trials, size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_block, scenario, cfg, master_seed, b, timeouts, t_stop, keep_log)
                   for b in blocks]
        rows = []
        for f in futures:
            rows.extend(f.result())
    return rows


def simulate_outcomes(scenario, cfg, trials, master_seed, timeouts, n_jobs=None, keep_log=False):
    """Outcome table ``[trial][timeout]`` from coupled trials.

    Each trial is simulated once up to the largest timeout and read off at
    every requested timeout.
    """
    timeouts = [check_nonnegative(tg, "T_G_h", allow_inf=True) for tg in timeouts]
    return _map_trials(scenario, cfg, trials, master_seed, timeouts, max(timeouts), n_jobs, keep_log)


def simulate_timelines(scenario, cfg, trials, master_seed, t_stop=math.inf, n_jobs=None):
    """Raw :class:`Timeline` per trial, simulated up to ``t_stop`` (and the horizon)."""
    t_stop = check_nonnegative(t_stop, "t_stop", allow_inf=True)
    return _map_trials(scenario, cfg, trials, master_seed, None, t_stop, n_jobs, False)


def run_monte_carlo(scenario, cfg: AttackConfig, trials, master_seed=0, n_jobs=None,
                    keep_records=False) -> MonteCarloSummary:
    """Run ``trials`` coupled trials (ids ``0..trials-1``) and aggregate them."""
    rows = simulate_outcomes(scenario, cfg, trials, master_seed, [cfg.T_G_h], n_jobs=n_jobs)
    return MonteCarloSummary.from_outcomes((r[0] for r in rows), T_G_h=cfg.T_G_h,
                                           keep_records=keep_records)
