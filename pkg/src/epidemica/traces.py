"""Importing contact and social-graph CSVs, and building dual-path exposure streams.

Contact files use the header ``t_start,t_end,u,v`` (hours, integer or string
ids).  Social files use ``u,v``.  Lines starting with ``#`` are comments; a
comment of the form ``# key=value,key=value`` may carry ``n_nodes`` and
``duration_h`` metadata, which :meth:`ContactTrace.to_csv` writes when asked.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import ConfigError, DataError, check_positive, check_probability
from .engine import (
    MAX_CONTACTS,
    MAX_SLOTS,
    NODE_BITS,
    Channel,
    ExposureStream,
    proximity_keys,
    social_keys,
)
from .mobility import TRACE_HEADER, ContactTrace

SOCIAL_HEADER = ("u", "v")


class DataWarning(UserWarning):
    """Input was accepted after a repair (e.g. merged overlapping contacts)."""


@dataclass
class SocialGraph:
    n_nodes: int
    edges: np.ndarray  # shape (m, 2), rows (u, v) with u < v, sorted
    id_map: dict | None = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            if np.any(e[:, 0] == e[:, 1]):
                raise DataError("social graph has a self-loop")
            e = np.unique(np.sort(e, axis=1), axis=0)
            if e.min() < 0 or e.max() >= self.n_nodes:
                raise DataError(f"social edge id out of range for n_nodes={self.n_nodes}")
        self.edges = e

    @classmethod
    def empty(cls, n_nodes):
        return cls(n_nodes, np.empty((0, 2), dtype=np.int64))

    def __len__(self):
        return len(self.edges)

    def degrees(self):
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def with_n_nodes(self, n_nodes):
        if n_nodes < self.n_nodes:
            raise DataError("cannot shrink a social graph")
        return SocialGraph(n_nodes, self.edges, self.id_map)

    def to_csv(self, dest=None, comment=None):
        buf = io.StringIO()
        if comment:
            for line in comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SOCIAL_HEADER)
        w.writerows(self.edges.tolist())
        text = buf.getvalue()
        if dest is None:
            return text
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return None


@dataclass(frozen=True)
class DualPathConfig:
    p_s: float = 0.05
    p_l: float = 0.05
    social_slot_h: float = 0.25
    horizon_h: float | None = None  # None: use the trace duration

    def __post_init__(self):
        check_probability(self.p_s, "p_s")
        check_probability(self.p_l, "p_l")
        check_positive(self.social_slot_h, "social_slot_h")
        if self.horizon_h is not None:
            check_positive(self.horizon_h, "horizon_h")


# --------------------------------------------------------------------------
# CSV import


def _read_rows(source, header):
    """Yield ``(line_no, fields)`` for data rows plus the parsed metadata comments."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    meta = {}
    rows = []
    seen_header = False
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped.lstrip("#").strip()
            for part in body.split(","):
                key, sep, value = part.partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
            continue
        fields = next(csv.reader([stripped]))
        if not seen_header:
            if tuple(f.strip() for f in fields) != header:
                raise DataError(f"line {line_no}: expected header {','.join(header)!r}")
            seen_header = True
            continue
        rows.append((line_no, [f.strip() for f in fields]))
    if not seen_header:
        raise DataError(f"missing header {','.join(header)!r}")
    return rows, meta


def _id_parser(remap, id_map):
    if id_map is not None:
        lookup = {str(k): v for k, v in id_map.items()}

        def parse(raw):
            if raw not in lookup:
                raise ValueError(f"id {raw!r} not in the id mapping")
            return lookup[raw]
        return parse
    if remap:
        return lambda raw: raw

    def parse(raw):
        value = int(raw)
        if value < 0:
            raise ValueError("negative node id")
        return value
    return parse


def _dense_mapping(raw_ids):
    ids = set(raw_ids)
    try:
        ordered = sorted(ids, key=int)
    except ValueError:
        ordered = sorted(ids)
    return {raw: i for i, raw in enumerate(ordered)}


def _raise_collected(errors, what):
    if errors:
        shown = "; ".join(errors[:20])
        more = f" (+{len(errors) - 20} more)" if len(errors) > 20 else ""
        raise DataError(f"malformed {what}: {shown}{more}")


def import_contact_csv(source, n_nodes=None, duration_h=None, remap=False, id_map=None):
    """Read, validate and normalise a contact CSV into a :class:`ContactTrace`.

    Node count defaults to ``max id + 1``.  With ``remap=True`` ids (which may
    be arbitrary strings) are renumbered densely and the mapping is kept on
    ``trace.id_map``; ``id_map`` applies an existing mapping instead.
    Overlapping intervals of one pair are merged with a :class:`DataWarning`.
    """
    rows, meta = _read_rows(source, TRACE_HEADER)
    parse_id = _id_parser(remap, id_map)
    errors, parsed = [], []
    for line_no, f in rows:
        if len(f) != 4:
            errors.append(f"line {line_no}: expected 4 fields, got {len(f)}")
            continue
        try:
            a, b = float(f[0]), float(f[1])
            u, v = parse_id(f[2]), parse_id(f[3])
        except ValueError as exc:
            errors.append(f"line {line_no}: {exc}")
            continue
        if not (math.isfinite(a) and math.isfinite(b)) or a < 0:
            errors.append(f"line {line_no}: times must be finite and non-negative")
        elif b <= a:
            errors.append(f"line {line_no}: t_end must exceed t_start")
        elif u == v:
            errors.append(f"line {line_no}: contact of a node with itself")
        else:
            parsed.append((a, b, u, v))
    _raise_collected(errors, "contact rows")

    mapping = None
    if remap and id_map is None:
        mapping = _dense_mapping([p[2] for p in parsed] + [p[3] for p in parsed])
        parsed = [(a, b, mapping[u], mapping[v]) for a, b, u, v in parsed]
    elif id_map is not None:
        mapping = dict(id_map)

    by_pair = {}
    for a, b, u, v in parsed:
        if u > v:
            u, v = v, u
        by_pair.setdefault((u, v), []).append((a, b))
    events, merged = [], 0
    for (u, v), spans in by_pair.items():
        spans.sort()
        cur_a, cur_b = spans[0]
        for a, b in spans[1:]:
            if a < cur_b:
                merged += 1
                cur_b = max(cur_b, b)
            else:
                events.append((cur_a, cur_b, u, v))
                cur_a, cur_b = a, b
        events.append((cur_a, cur_b, u, v))
    if merged:
        warnings.warn(f"merged {merged} overlapping contact interval(s)", DataWarning, stacklevel=2)
    events.sort(key=lambda e: (e[0], e[2], e[3], e[1]))

    max_id = max((e[3] for e in events), default=-1)
    if n_nodes is None:
        n_nodes = int(meta["n_nodes"]) if "n_nodes" in meta else max_id + 1
        if mapping is not None:
            n_nodes = max(n_nodes, len(mapping))
    elif max_id >= n_nodes:
        raise DataError(f"node id {max_id} out of range for n_nodes={n_nodes}")
    last = max((e[1] for e in events), default=0.0)
    if duration_h is None:
        duration_h = float(meta["duration_h"]) if "duration_h" in meta else last
    if duration_h < last:
        raise DataError(f"duration_h={duration_h} is shorter than the last contact ({last})")
    trace = ContactTrace.from_events(events, n_nodes=n_nodes, duration_h=duration_h,
                                     provenance=meta.get("provenance", "imported"))
    trace.id_map = mapping
    if len(trace):
        trace.validate()
    return trace


def import_social_csv(source, n_nodes=None, remap=False, id_map=None):
    """Read an undirected ``u,v`` edge list; duplicates in either orientation collapse."""
    rows, meta = _read_rows(source, SOCIAL_HEADER)
    parse_id = _id_parser(remap, id_map)
    errors, edges = [], []
    for line_no, f in rows:
        if len(f) != 2:
            errors.append(f"line {line_no}: expected 2 fields, got {len(f)}")
            continue
        try:
            u, v = parse_id(f[0]), parse_id(f[1])
        except ValueError as exc:
            errors.append(f"line {line_no}: {exc}")
            continue
        if u == v:
            errors.append(f"line {line_no}: self-loop on node {f[0]}")
            continue
        edges.append((u, v))
    _raise_collected(errors, "social rows")

    mapping = None
    if remap and id_map is None:
        mapping = _dense_mapping([x for e in edges for x in e])
        edges = [(mapping[u], mapping[v]) for u, v in edges]
    elif id_map is not None:
        mapping = dict(id_map)
    max_id = max((max(e) for e in edges), default=-1)
    if n_nodes is None:
        n_nodes = int(meta["n_nodes"]) if "n_nodes" in meta else max_id + 1
        if mapping is not None:
            n_nodes = max(n_nodes, len(mapping))
    elif max_id >= n_nodes:
        raise DataError(f"node id {max_id} out of range for n_nodes={n_nodes}")
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return SocialGraph(n_nodes, arr, mapping)


# --------------------------------------------------------------------------
# exposure streams


def proximity_opportunities(trace: ContactTrace, slot_h, horizon_h):
    """Proximity opportunities as column arrays ``(t, src, dst, key)``.

    Each contact yields one opportunity per direction at its start, plus one
    more per direction every ``slot_h`` while the contact is still running.
    """
    if len(trace) == 0:
        e = np.empty(0)
        return e, e.astype(np.int64), e.astype(np.int64), e.astype(np.uint64)
    if len(trace) >= MAX_CONTACTS:
        raise DataError("too many contacts for the event-key layout")
    length = trace.t_end - trace.t_start
    n_slots = np.maximum(np.ceil(length / slot_h - 1e-9), 1).astype(np.int64)
    if n_slots.max() > MAX_SLOTS:
        raise DataError("contact too long for the event-key layout; use a larger slot")
    idx = np.repeat(np.arange(len(trace)), n_slots)
    first = np.cumsum(n_slots) - n_slots
    slot = np.arange(idx.size) - np.repeat(first, n_slots)
    t = trace.t_start[idx] + slot * slot_h
    keep = t <= horizon_h
    idx, slot, t = idx[keep], slot[keep], t[keep]
    u, v = trace.u[idx], trace.v[idx]
    ts = np.concatenate([t, t])
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    direction = np.concatenate([np.zeros(idx.size, np.uint64), np.ones(idx.size, np.uint64)])
    key = proximity_keys(np.concatenate([idx, idx]), np.concatenate([slot, slot]), direction)
    return ts, src, dst, key


def social_opportunities(graph: SocialGraph, slot_h, horizon_h):
    """One opportunity per direction per social edge at the end of every slot in the horizon."""
    n_slots = int(math.floor(horizon_h / slot_h + 1e-9))
    if len(graph) == 0 or n_slots == 0:
        e = np.empty(0)
        return e, e.astype(np.int64), e.astype(np.int64), e.astype(np.uint64)
    if n_slots > MAX_SLOTS:
        raise DataError("horizon too long for the event-key layout; use a larger slot")
    if graph.n_nodes > 1 << NODE_BITS:
        raise DataError("too many nodes for the event-key layout")
    slot = np.arange(n_slots)
    t = np.minimum((slot + 1) * slot_h, horizon_h)
    u = np.repeat(graph.edges[:, 0], n_slots)
    v = np.repeat(graph.edges[:, 1], n_slots)
    s = np.tile(slot, len(graph))
    tt = np.tile(t, len(graph))
    ts = np.concatenate([tt, tt])
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    direction = np.concatenate([np.zeros(u.size, np.uint64), np.ones(u.size, np.uint64)])
    key = social_keys(np.concatenate([u, u]), np.concatenate([v, v]), np.concatenate([s, s]), direction)
    return ts, src, dst, key


def build_exposure_stream(trace: ContactTrace | None, graph: SocialGraph | None,
                          cfg: DualPathConfig = DualPathConfig()) -> ExposureStream:
    """Merge proximity and social opportunities into one time-sorted stream.

    Either input may be None.  Keys are stable: proximity keys depend only on
    the contact's position in the trace, social keys only on the edge's node
    ids, so each channel's sub-stream is independent of the other input.
    """
    if trace is None and graph is None:
        raise ConfigError("need a contact trace, a social graph, or both")
    if trace is not None and graph is not None and trace.n_nodes != graph.n_nodes:
        raise DataError(f"node count mismatch: trace has {trace.n_nodes}, graph has {graph.n_nodes}")
    n_nodes = trace.n_nodes if trace is not None else graph.n_nodes
    horizon = cfg.horizon_h
    if horizon is None:
        if trace is None:
            raise ConfigError("horizon_h is required when there is no contact trace")
        horizon = trace.duration_h
    parts = []
    if trace is not None:
        t, s, d, k = proximity_opportunities(trace, cfg.social_slot_h, horizon)
        parts.append((t, s, d, np.full(t.size, Channel.PROXIMITY, np.int8), k))
    if graph is not None:
        t, s, d, k = social_opportunities(graph, cfg.social_slot_h, horizon)
        parts.append((t, s, d, np.full(t.size, Channel.SOCIAL, np.int8), k))
    t, s, d, c, k = (np.concatenate(col) for col in zip(*parts))
    order = np.lexsort((k, t))
    return ExposureStream(t[order], s[order], d[order], c[order], k[order],
                          n_nodes=n_nodes, horizon_h=float(horizon))


def import_exposure_csv(source, n_nodes=None, horizon_h=None):
    """Read a stream written by :meth:`ExposureStream.to_csv` (or a hand-scripted one).

    ``channel`` may be ``proximity``/``social`` or 0/1; ``event_key`` may be
    left empty, in which case the row number (from 0) is used.
    """
    from .engine import STREAM_HEADER

    rows, meta = _read_rows(source, STREAM_HEADER)
    names = {c.name.lower(): int(c) for c in Channel}
    errors, events = [], []
    for i, (line_no, f) in enumerate(rows):
        if len(f) != 5:
            errors.append(f"line {line_no}: expected 5 fields, got {len(f)}")
            continue
        try:
            t = float(f[0])
            s, d = int(f[1]), int(f[2])
            c = names[f[3].lower()] if f[3].lower() in names else int(Channel(int(f[3])))
            k = int(f[4]) if f[4] else i
        except (ValueError, KeyError) as exc:
            errors.append(f"line {line_no}: {exc}")
            continue
        if not math.isfinite(t) or t < 0:
            errors.append(f"line {line_no}: time must be finite and non-negative")
        elif s < 0 or d < 0 or s == d:
            errors.append(f"line {line_no}: bad node ids")
        elif not 0 <= k < 2**64:
            errors.append(f"line {line_no}: event_key must fit in 64 bits")
        else:
            events.append((t, s, d, c, k))
    _raise_collected(errors, "exposure rows")
    max_id = max((max(e[1], e[2]) for e in events), default=-1)
    if n_nodes is None:
        n_nodes = int(meta["n_nodes"]) if "n_nodes" in meta else max_id + 1
    if horizon_h is None:
        horizon_h = float(meta["horizon_h"]) if "horizon_h" in meta else math.inf
    return ExposureStream.from_events(events, n_nodes=n_nodes, horizon_h=horizon_h).validate()
