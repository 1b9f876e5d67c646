"""Synthetic mobility on a wrap-around square and pairwise meeting rates.

Two classical models are provided.  Random waypoint (RWP) picks a destination
uniformly in the square and walks to it in a straight line; random direction
(RD) picks a heading uniformly on [0, 2*pi) and walks an exponentially
distributed distance (mean L/2) before redrawing.  Speeds are redrawn per leg,
uniformly on [v_min, v_max].  Contacts are detected with the toroidal metric
on a fixed time step.
"""
from __future__ import annotations

import csv
import enum
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import ellipe

from ._validation import (
    ConfigError,
    DataError,
    check_count,
    check_point,
    check_positive,
    check_seed,
)

# RWP/RD constants of the standard hitting-rate approximation
RWP_OMEGA = 1.3683
RD_OMEGA = 1.0

TRACE_HEADER = ("t_start", "t_end", "u", "v")


class FidelityWarning(UserWarning):
    """Time step is coarse enough that contacts can be stepped over."""


class MobilityModel(str, enum.Enum):
    RWP = "RWP"
    RD = "RD"


@dataclass(frozen=True)
class MobilityConfig:
    n_nodes: int = 100
    box_length_km: float = 2.5352
    radius_km: float = 0.1
    v_min_kmh: float = 4.0
    v_max_kmh: float = 10.0
    model: MobilityModel = MobilityModel.RWP
    dt_h: float = 0.002
    duration_h: float = 30.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model", MobilityModel(self.model))
        check_count(self.n_nodes, "n_nodes", minimum=2)
        L = check_positive(self.box_length_km, "box_length_km")
        r = check_positive(self.radius_km, "radius_km")
        if not r < L / 2:
            raise ConfigError("radius_km must be < box_length_km / 2")
        vmin = check_positive(self.v_min_kmh, "v_min_kmh")
        vmax = check_positive(self.v_max_kmh, "v_max_kmh")
        if vmin > vmax:
            raise ConfigError("v_min_kmh must be <= v_max_kmh")
        check_positive(self.dt_h, "dt_h")
        check_positive(self.duration_h, "duration_h")
        check_seed(self.rng_seed, "rng_seed")

    @property
    def coarse_step(self) -> bool:
        """True when one step can move a node further than r/2."""
        return self.dt_h * self.v_max_kmh > self.radius_km / 2

    def replace(self, **changes) -> "MobilityConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return MobilityConfig(**d)


class ContactEvent(NamedTuple):
    t_start_h: float
    t_end_h: float
    u: int
    v: int


@dataclass
class ContactTrace:
    """Time-ordered pairwise contact intervals (columnar storage)."""

    t_start: np.ndarray
    t_end: np.ndarray
    u: np.ndarray
    v: np.ndarray
    n_nodes: int
    duration_h: float
    provenance: str = "imported"
    id_map: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.t_start = np.asarray(self.t_start, dtype=np.float64).reshape(-1)
        self.t_end = np.asarray(self.t_end, dtype=np.float64).reshape(-1)
        self.u = np.asarray(self.u, dtype=np.int64).reshape(-1)
        self.v = np.asarray(self.v, dtype=np.int64).reshape(-1)
        n = len(self.t_start)
        if not (len(self.t_end) == len(self.u) == len(self.v) == n):
            raise DataError("contact trace columns differ in length")

    @classmethod
    def from_events(cls, events, n_nodes, duration_h, provenance="imported"):
        events = list(events)
        cols = list(zip(*events)) if events else [[], [], [], []]
        return cls(*cols, n_nodes=n_nodes, duration_h=duration_h, provenance=provenance)

    def __len__(self):
        return len(self.t_start)

    @property
    def events(self) -> list[ContactEvent]:
        return [
            ContactEvent(float(a), float(b), int(c), int(d))
            for a, b, c, d in zip(self.t_start, self.t_end, self.u, self.v)
        ]

    def validate(self) -> "ContactTrace":
        """Check every structural invariant; raise DataError on the first breach."""
        check_count(self.n_nodes, "n_nodes", minimum=2)
        if not self.duration_h > 0:
            raise DataError("trace duration must be > 0")
        if len(self) == 0:
            return self
        if np.any(self.u >= self.v):
            raise DataError("contact events must satisfy u < v")
        if self.u.min() < 0 or self.v.max() >= self.n_nodes:
            raise DataError("node id out of range")
        if np.any(self.t_start >= self.t_end):
            raise DataError("contact events must satisfy t_start < t_end")
        if self.t_start.min() < 0 or self.t_end.max() > self.duration_h:
            raise DataError("contact events must lie within [0, duration_h]")
        if np.any(np.diff(self.t_start) < 0):
            raise DataError("contact events must be sorted by t_start")
        order = np.lexsort((self.t_start, self.v, self.u))
        same = (np.diff(self.u[order]) == 0) & (np.diff(self.v[order]) == 0)
        if np.any(same & (self.t_start[order][1:] < self.t_end[order][:-1])):
            raise DataError("overlapping contact events for a pair")
        return self

    def to_csv(self, dest=None, comment: str | None = None, meta=True) -> str | None:
        """Write ``t_start,t_end,u,v``; returns the text when ``dest`` is None.

        Times are written with ``repr`` so a write/read cycle is exact.  With
        ``meta`` a leading comment records n_nodes, duration and provenance.
        """
        buf = io.StringIO()
        if comment:
            for line in comment.splitlines():
                buf.write(f"# {line}\n")
        if meta:
            buf.write(f"# n_nodes={self.n_nodes},duration_h={float(self.duration_h)!r},"
                      f"provenance={self.provenance}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for a, b, c, d in zip(self.t_start.tolist(), self.t_end.tolist(),
                              self.u.tolist(), self.v.tolist()):
            w.writerow((repr(a), repr(b), c, d))
        text = buf.getvalue()
        if dest is None:
            return text
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return None


def toroidal_distance(p, q, L):
    """Shortest distance between ``p`` and ``q`` on an L x L torus.

    Works elementwise on arrays of points with a trailing axis of size 2.
    """
    p = check_point(p, "p")
    q = check_point(q, "q")
    L = check_positive(L, "L")
    d = np.abs(p - q) % L
    d = np.minimum(d, L - d)
    out = np.sqrt(np.sum(d * d, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# motion


def _speeds(rng, cfg, n):
    return rng.uniform(cfg.v_min_kmh, cfg.v_max_kmh, size=n)


class _RandomWaypoint:
    def __init__(self, cfg, rng, pos):
        self.cfg, self.rng = cfg, rng
        L = cfg.box_length_km
        n = len(pos)
        self.pos = pos
        self.wp = rng.uniform(0.0, L, size=(n, 2))
        self.speed = _speeds(rng, cfg, n)

    def step(self, dt):
        left = np.full(len(self.pos), dt)
        active = np.arange(len(self.pos))
        while active.size:
            vec = self.wp[active] - self.pos[active]
            dist = np.hypot(vec[:, 0], vec[:, 1])
            reach = self.speed[active] * left[active]
            arrive = dist <= reach
            go = active[~arrive]
            if go.size:
                frac = (reach[~arrive] / dist[~arrive])[:, None]
                self.pos[go] += vec[~arrive] * frac
            done = active[arrive]
            if not done.size:
                break
            left[done] -= dist[arrive] / self.speed[done]
            self.pos[done] = self.wp[done]
            self.wp[done] = self.rng.uniform(0.0, self.cfg.box_length_km, size=(done.size, 2))
            self.speed[done] = _speeds(self.rng, self.cfg, done.size)
            active = done[left[done] > 0]
        # straight legs inside the square never leave it; guard rounding only
        np.clip(self.pos, 0.0, np.nextafter(self.cfg.box_length_km, 0.0), out=self.pos)


class _RandomDirection:
    def __init__(self, cfg, rng, pos):
        self.cfg, self.rng = cfg, rng
        n = len(pos)
        self.pos = pos
        self.heading = np.empty(n)
        self.speed = np.empty(n)
        self.leg = np.empty(n)
        self._redraw(np.arange(n))

    def _redraw(self, idx):
        self.heading[idx] = self.rng.uniform(0.0, 2 * math.pi, size=idx.size)
        self.speed[idx] = _speeds(self.rng, self.cfg, idx.size)
        self.leg[idx] = self.rng.exponential(self.cfg.box_length_km / 2, size=idx.size)

    def step(self, dt):
        L = self.cfg.box_length_km
        left = np.full(len(self.pos), dt)
        active = np.arange(len(self.pos))
        while active.size:
            travel = np.minimum(self.leg[active], self.speed[active] * left[active])
            self.pos[active, 0] += travel * np.cos(self.heading[active])
            self.pos[active, 1] += travel * np.sin(self.heading[active])
            self.leg[active] -= travel
            left[active] -= travel / self.speed[active]
            done = active[self.leg[active] <= 0]
            if not done.size:
                break
            self._redraw(done)
            active = done[left[done] > 1e-15]
        self.pos %= L
        self.pos[self.pos >= L] = 0.0


def iter_motion(cfg: MobilityConfig):
    """Yield ``(t_h, positions, speeds)`` on the step grid, starting at t=0.

    Arrays are live views into the simulator state; copy before keeping them.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    pos = rng.uniform(0.0, cfg.box_length_km, size=(cfg.n_nodes, 2))
    mover = (_RandomWaypoint if cfg.model is MobilityModel.RWP else _RandomDirection)(cfg, rng, pos)
    n_steps = int(math.floor(cfg.duration_h / cfg.dt_h + 1e-9))
    yield 0.0, mover.pos, mover.speed
    for k in range(1, n_steps + 1):
        mover.step(cfg.dt_h)
        yield k * cfg.dt_h, mover.pos, mover.speed


def generate_contact_trace(cfg: MobilityConfig) -> ContactTrace:
    """Simulate ``cfg`` and return every interval during which a pair is within r.

    A contact opens at the first step where the toroidal distance is <= r and
    closes at the first step where it exceeds r (or at the end of the trace).
    Output is bit-identical for identical configs.
    """
    if cfg.coarse_step:
        warnings.warn(
            f"dt_h*v_max_kmh = {cfg.dt_h * cfg.v_max_kmh:g} km exceeds radius_km/2; "
            "short contacts may be missed",
            FidelityWarning,
            stacklevel=2,
        )
    L, r2 = cfg.box_length_km, cfg.radius_km**2
    iu, ju = np.triu_indices(cfg.n_nodes, 1)
    open_at = np.full(iu.size, np.nan)
    starts, ends, us, vs = [], [], [], []

    def close(idx, t):
        starts.append(open_at[idx])
        ends.append(np.full(idx.size, t))
        us.append(iu[idx])
        vs.append(ju[idx])
        open_at[idx] = np.nan

    in_prev = np.zeros(iu.size, dtype=bool)
    for t, pos, _ in iter_motion(cfg):
        d = np.abs(pos[iu] - pos[ju])
        d = np.minimum(d, L - d)
        in_now = (d[:, 0] ** 2 + d[:, 1] ** 2) <= r2
        ended = np.flatnonzero(in_prev & ~in_now)
        if ended.size:
            close(ended, t)
        if t < cfg.duration_h:
            opened = np.flatnonzero(in_now & ~in_prev)
            open_at[opened] = t
        else:
            in_now &= in_prev
        in_prev = in_now
    still = np.flatnonzero(in_prev)
    if still.size:
        close(still, cfg.duration_h)

    if starts:
        ts, te = np.concatenate(starts), np.concatenate(ends)
        u, v = np.concatenate(us), np.concatenate(vs)
    else:
        ts = te = np.empty(0)
        u = v = np.empty(0, dtype=np.int64)
    order = np.lexsort((v, u, ts))
    return ContactTrace(ts[order], te[order], u[order], v[order], n_nodes=cfg.n_nodes,
                        duration_h=cfg.duration_h, provenance=f"synthetic-{cfg.model.value}")


def poisson_contact_trace(n_nodes, pair_rate, duration_h, rng_seed=0, contact_duration_h=1e-3):
    """Contact trace whose per-pair contact starts form Poisson processes.

    Each contact lasts ``contact_duration_h`` (cut short by the pair's next
    contact or by the end of the trace).
    """
    check_count(n_nodes, "n_nodes", minimum=2)
    duration_h = check_positive(duration_h, "duration_h")
    check_positive(contact_duration_h, "contact_duration_h")
    if pair_rate < 0:
        raise ConfigError("pair_rate must be >= 0")
    rng = np.random.default_rng(check_seed(rng_seed, "rng_seed"))
    iu, ju = np.triu_indices(n_nodes, 1)
    n = rng.poisson(pair_rate * iu.size * duration_h)
    ts = np.sort(rng.uniform(0.0, duration_h, size=n))
    pair = rng.integers(0, iu.size, size=n)
    te = np.minimum(ts + contact_duration_h, duration_h)
    # truncate at the pair's next start so per-pair intervals stay disjoint
    order = np.lexsort((ts, pair))
    nxt = np.full(n, np.inf)
    same = pair[order][1:] == pair[order][:-1]
    nxt[order[:-1][same]] = ts[order][1:][same]
    te = np.minimum(te, nxt)
    keep = te > ts
    return ContactTrace(ts[keep], te[keep], iu[pair[keep]], ju[pair[keep]], n_nodes=n_nodes,
                        duration_h=duration_h, provenance="synthetic-poisson")


# --------------------------------------------------------------------------
# meeting rates


@dataclass(frozen=True)
class MeetingRateEstimate:
    rate: float
    n_contacts: int
    n_pairs: int
    duration_h: float
    mean_inter_meeting_h: float
    n_inter_meeting_samples: int

    def confidence_interval(self, z=1.959964):
        """Normal-approximation band for a Poisson count of contact starts."""
        exposure = self.n_pairs * self.duration_h
        half = z * math.sqrt(max(self.n_contacts, 1)) / exposure
        return max(0.0, self.rate - half), self.rate + half


def estimate_pairwise_meeting_rate(trace: ContactTrace) -> MeetingRateEstimate:
    """Contact starts per unordered pair per hour.

    Also reports the mean gap between the end of one contact and the start of
    the next for the same pair, averaged over all observed gaps.
    """
    if not trace.duration_h > 0:
        raise DataError("trace duration must be > 0")
    if trace.n_nodes < 2:
        raise DataError("trace needs at least two nodes")
    n_pairs = trace.n_nodes * (trace.n_nodes - 1) // 2
    n = len(trace)
    rate = n / (n_pairs * trace.duration_h)
    if n > 1:
        order = np.lexsort((trace.t_start, trace.v, trace.u))
        u, v = trace.u[order], trace.v[order]
        same = (u[1:] == u[:-1]) & (v[1:] == v[:-1])
        gaps = (trace.t_start[order][1:] - trace.t_end[order][:-1])[same]
    else:
        gaps = np.empty(0)
    mean_gap = float(gaps.mean()) if gaps.size else math.nan
    return MeetingRateEstimate(rate, n, n_pairs, float(trace.duration_h), mean_gap, int(gaps.size))


def _mean_angle_speed(a, b):
    # mean over a uniform relative heading of |a - b*exp(i*theta)|
    s = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        m = np.where(s > 0, 4 * a * b / np.where(s > 0, s * s, 1.0), 0.0)
    return 2 * s / math.pi * ellipe(m)


def mean_relative_speed(v_min, v_max, n_quad=96):
    """Expected relative speed of two independent nodes.

    Headings are independent and uniform.  Speeds follow the time-stationary
    law of a per-leg uniform draw, whose density is proportional to 1/v
    because slow legs last longer.
    """
    v_min, v_max = float(v_min), float(v_max)
    if v_min == v_max:
        return 4 * v_min / math.pi
    x, w = np.polynomial.legendre.leggauss(n_quad)
    v = 0.5 * (v_max - v_min) * x + 0.5 * (v_max + v_min)
    w = 0.5 * (v_max - v_min) * w / v / math.log(v_max / v_min)
    return float(w @ _mean_angle_speed(v[:, None], v[None, :]) @ w)


def analytic_meeting_rate(cfg: MobilityConfig) -> float:
    """Per-pair meeting rate ``2*omega*r*E[V*]/L**2`` (per hour)."""
    omega = RWP_OMEGA if cfg.model is MobilityModel.RWP else RD_OMEGA
    ev = mean_relative_speed(cfg.v_min_kmh, cfg.v_max_kmh)
    return 2 * omega * cfg.radius_km * ev / cfg.box_length_km**2
