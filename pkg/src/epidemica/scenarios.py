"""Where the exposure stream of each Monte Carlo trial comes from.

A scenario has ``n_nodes``, a ``fixed`` flag (same stream for every trial)
and ``stream(master_seed, trial_id)``.  Scenarios that regenerate contacts per
trial derive their randomness from ``(master_seed, trial_id)`` only, so the
stream of a trial does not depend on which worker builds it.
"""
from __future__ import annotations


import numpy as np

from . import _random
from ._validation import ConfigError, check_count, check_nonnegative, check_positive
from .engine import Channel, ExposureStream, proximity_keys
from .mobility import MobilityConfig, generate_contact_trace
from .traces import DualPathConfig, SocialGraph, build_exposure_stream

_MIXING = 0x313C
_TRACE = 0x7ACE


class StreamScenario:
    """The same stream for every trial."""

    fixed = True

    def __init__(self, stream: ExposureStream):
        self._stream = stream.validate()
        self.n_nodes = stream.n_nodes

    def stream(self, master_seed, trial_id):
        return self._stream


class PoissonMixingScenario:
    """Fully mixed population: every pair meets as a Poisson process.

    Each meeting is instantaneous and gives one opportunity per direction.
    """

    fixed = False

    def __init__(self, n_nodes, pair_rate_per_h, horizon_h):
        self.n_nodes = check_count(n_nodes, "n_nodes", minimum=2)
        self.pair_rate_per_h = check_nonnegative(pair_rate_per_h, "pair_rate_per_h")
        self.horizon_h = check_positive(horizon_h, "horizon_h")

    @classmethod
    def from_aggregate_rate(cls, n_nodes, aggregate_rate_per_h, horizon_h):
        """Per-pair rate chosen so that ``pair_rate * n_nodes`` equals the given rate."""
        return cls(n_nodes, aggregate_rate_per_h / n_nodes, horizon_h)

    @property
    def aggregate_rate_per_h(self):
        return self.pair_rate_per_h * self.n_nodes

    def stream(self, master_seed, trial_id):
        rng = _random.trial_rng(master_seed, trial_id, _MIXING)
        n_pairs = self.n_nodes * (self.n_nodes - 1) // 2
        count = int(rng.poisson(self.pair_rate_per_h * n_pairs * self.horizon_h))
        t = np.sort(rng.uniform(0.0, self.horizon_h, size=count))
        iu, ju = np.triu_indices(self.n_nodes, 1)
        pair = rng.integers(0, n_pairs, size=count)
        u, v = iu[pair], ju[pair]
        idx = np.arange(count)
        # interleave the two directions of each meeting; keys rise with position
        ts = np.repeat(t, 2)
        src = np.column_stack([u, v]).ravel()
        dst = np.column_stack([v, u]).ravel()
        key = proximity_keys(np.repeat(idx, 2), 0, np.tile(np.array([0, 1], np.uint64), count))
        ch = np.full(2 * count, Channel.PROXIMITY, np.int8)
        return ExposureStream(ts, src, dst, ch, key, n_nodes=self.n_nodes, horizon_h=self.horizon_h)


class MobilityScenario:
    """Streams from synthetic mobility, optionally with a social graph on top.

    With ``regenerate=True`` every trial gets a fresh trace whose seed is
    derived from ``(master_seed, trial_id)``; otherwise the trace for
    ``cfg.rng_seed`` is generated once and shared by all trials.
    """

    def __init__(self, cfg: MobilityConfig, dual: DualPathConfig | None = None,
                 graph: SocialGraph | None = None, regenerate=False):
        self.cfg = cfg
        self.dual = dual or DualPathConfig(horizon_h=cfg.duration_h)
        self.graph = graph
        self.regenerate = bool(regenerate)
        self.n_nodes = cfg.n_nodes
        if graph is not None and graph.n_nodes != cfg.n_nodes:
            raise ConfigError("social graph and mobility config disagree on n_nodes")
        self._shared = None

    @property
    def fixed(self):
        return not self.regenerate

    def trace_seed(self, master_seed, trial_id):
        rng = _random.trial_rng(master_seed, trial_id, _TRACE)
        return int(rng.integers(0, 2**63))

    def stream(self, master_seed, trial_id):
        if not self.regenerate:
            if self._shared is None:
                self._shared = self._build(generate_contact_trace(self.cfg))
            return self._shared
        cfg = self.cfg.replace(rng_seed=self.trace_seed(master_seed, trial_id))
        return self._build(generate_contact_trace(cfg))

    def _build(self, trace):
        return build_exposure_stream(trace, self.graph, self.dual)

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_shared"] = None
        return state

