"""``epidemica`` command line.

Every command reads one JSON scenario document.  Outputs are written to a
temporary file and moved into place only after the command has succeeded,
and each CSV starts with a comment carrying the SHA-256 of the config bytes.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 infeasible request.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path


from . import analytic
from ._validation import ConfigError, DataError, InfeasibleError
from .engine import AttackConfig, PatchConfig, run_monte_carlo
from .mobility import (
    MobilityConfig,
    analytic_meeting_rate,
    estimate_pairwise_meeting_rate,
    generate_contact_trace,
)
from .optimizer import constrained_config_search, min_timeout_mc, tradeoff_curve, tradeoff_to_csv
from .scenarios import MobilityScenario, PoissonMixingScenario, StreamScenario
from .traces import (
    DualPathConfig,
    build_exposure_stream,
    import_contact_csv,
    import_exposure_csv,
    import_social_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE = 0, 2, 3, 4
SOURCES = ("mobility", "mixing", "trace_csv", "exposure_csv")


@dataclass
class ScenarioConfig:
    path: Path
    digest: str
    raw: dict
    attack: AttackConfig
    dual: DualPathConfig
    trials: int = 1000
    master_seed: int = 0
    mobility: MobilityConfig | None = None
    regenerate_mobility: bool = False
    mixing: dict | None = None
    trace_csv: Path | None = None
    social_csv: Path | None = None
    exposure_csv: Path | None = None
    epidemic: dict = field(default_factory=dict)

    @property
    def source(self):
        return next(s for s in SOURCES if getattr(self, s) is not None)


def _timeout(value):
    return math.inf if value is None else float(value)


def _section(doc, key, allowed):
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{key}' must be an object")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) in '{key}': {', '.join(sorted(unknown))}")
    return sec


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {"mobility", "mixing", "trace_csv", "social_csv", "exposure_csv", "regenerate_mobility",
             "attack", "dual_path", "epidemic", "trials", "master_seed", "description"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level field(s): {', '.join(sorted(unknown))}")
    present = [s for s in SOURCES if doc.get(s) is not None]
    if len(present) != 1:
        raise ConfigError(f"exactly one contact source is required, one of {SOURCES}; got {present}")

    base = path.parent

    def file_field(key):
        if doc.get(key) is None:
            return None
        p = (base / doc[key]) if not os.path.isabs(doc[key]) else Path(doc[key])
        if not p.is_file():
            raise ConfigError(f"{key}: file not found: {p}")
        return p

    a = _section(doc, "attack", {"seeds", "random_seeds", "target", "T_G_h", "p_prox", "p_social",
                                 "patch"})
    patch = a.get("patch")
    try:
        attack = AttackConfig(
            seeds=tuple(a.get("seeds", [0])),
            target=None if a.get("target", "random") == "random" else a["target"],
            T_G_h=_timeout(a.get("T_G_h")),
            p_prox=a.get("p_prox", 1.0),
            p_social=a.get("p_social", 0.0),
            n_random_seeds=a.get("random_seeds"),
            patch=PatchConfig(**patch) if patch else None,
        )
        d = _section(doc, "dual_path", {"p_s", "p_l", "social_slot_h", "horizon_h"})
        dual = DualPathConfig(**d)
        mobility = None
        if doc.get("mobility") is not None:
            m = _section(doc, "mobility", MobilityConfig.__dataclass_fields__)
            mobility = MobilityConfig(**m)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if "p_s" in d or "p_l" in d:
        if "p_social" in a or "p_prox" in a:
            raise ConfigError("give channel probabilities in 'attack' or 'dual_path', not both")
        attack = attack.replace(p_social=dual.p_s, p_prox=dual.p_l)
    mixing = None
    if doc.get("mixing") is not None:
        mixing = _section(doc, "mixing", {"n_nodes", "pair_rate_per_h", "aggregate_rate_per_h",
                                          "horizon_h"})
        if ("pair_rate_per_h" in mixing) == ("aggregate_rate_per_h" in mixing):
            raise ConfigError("mixing needs exactly one of pair_rate_per_h, aggregate_rate_per_h")
        for key in ("n_nodes", "horizon_h"):
            if key not in mixing:
                raise ConfigError(f"mixing.{key} is required")
    epi = _section(doc, "epidemic", {"N", "beta", "gamma", "I0", "Lambda"})
    trials = doc.get("trials", 1000)
    seed = doc.get("master_seed", 0)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("trials must be a positive integer")
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("master_seed must be an integer in [0, 2**64)")
    if doc.get("social_csv") is not None and not (doc.get("trace_csv") or doc.get("mobility")):
        raise ConfigError("social_csv needs a trace_csv or mobility contact source")
    return ScenarioConfig(
        path=path, digest=hashlib.sha256(data).hexdigest(), raw=doc, attack=attack, dual=dual,
        trials=trials, master_seed=seed, mobility=mobility,
        regenerate_mobility=bool(doc.get("regenerate_mobility", False)), mixing=mixing,
        trace_csv=file_field("trace_csv"), social_csv=file_field("social_csv"),
        exposure_csv=file_field("exposure_csv"), epidemic=epi,
    )


def _trace_and_graph(cfg):
    trace = import_contact_csv(cfg.trace_csv)
    graph = None
    if cfg.social_csv is not None:
        graph = import_social_csv(cfg.social_csv, n_nodes=trace.n_nodes)
    return trace, graph


def build_scenario(cfg: ScenarioConfig):
    src = cfg.source
    if src == "mixing":
        m = cfg.mixing
        if "pair_rate_per_h" in m:
            return PoissonMixingScenario(m["n_nodes"], m["pair_rate_per_h"], m["horizon_h"])
        return PoissonMixingScenario.from_aggregate_rate(m["n_nodes"], m["aggregate_rate_per_h"],
                                                         m["horizon_h"])
    if src == "mobility":
        graph = None
        if cfg.social_csv is not None:
            graph = import_social_csv(cfg.social_csv, n_nodes=cfg.mobility.n_nodes)
        dual = cfg.dual
        if dual.horizon_h is None:
            dual = DualPathConfig(dual.p_s, dual.p_l, dual.social_slot_h, cfg.mobility.duration_h)
        return MobilityScenario(cfg.mobility, dual, graph, regenerate=cfg.regenerate_mobility)
    if src == "trace_csv":
        trace, graph = _trace_and_graph(cfg)
        return StreamScenario(build_exposure_stream(trace, graph, cfg.dual))
    return StreamScenario(import_exposure_csv(cfg.exposure_csv))


def epidemic_params(cfg: ScenarioConfig) -> analytic.EpidemicParams:
    """Analytic parameters implied by the scenario, with explicit overrides applied."""
    e = cfg.epidemic
    a = cfg.attack
    I0 = e.get("I0", a.n_random_seeds if a.n_random_seeds is not None else len(a.seeds))
    src = cfg.source
    if src == "mixing":
        N = cfg.mixing["n_nodes"]
        beta = cfg.mixing.get("pair_rate_per_h")
        if beta is None:
            beta = cfg.mixing["aggregate_rate_per_h"] / N
    elif src == "mobility":
        N, beta = cfg.mobility.n_nodes, analytic_meeting_rate(cfg.mobility)
    elif src == "trace_csv":
        trace = import_contact_csv(cfg.trace_csv)
        N, beta = trace.n_nodes, estimate_pairwise_meeting_rate(trace).rate
    else:
        stream = import_exposure_csv(cfg.exposure_csv)
        N, beta = stream.n_nodes, None
    N = e.get("N", N)
    if "Lambda" in e:
        if "beta" in e:
            raise ConfigError("give epidemic.beta or epidemic.Lambda, not both")
        beta = e["Lambda"] / N
    beta = e.get("beta", beta)
    if beta is None:
        raise ConfigError("epidemic.beta (or Lambda) is required for an exposure_csv source")
    return analytic.EpidemicParams(N=N, beta=beta, gamma=e.get("gamma", 0.0), I0=I0)


# --------------------------------------------------------------------------
# output helpers


def _header(cfg, command, **args):
    lines = [f"config_sha256={cfg.digest}", f"command={command}"]
    for k in sorted(args):
        lines.append(f"{k}={args[k]}")
    return "\n".join(lines)


class _Outputs:
    """Collects output texts and commits them together at the end."""

    def __init__(self):
        self.pending = []

    def add(self, path, text):
        if path is not None:
            self.pending.append((Path(path), text))

    def commit(self):
        staged = []
        try:
            for path, text in self.pending:
                path.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
                with os.fdopen(fd, "w", newline="") as fh:
                    fh.write(text)
                staged.append((tmp, path))
        except BaseException:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise
        for tmp, path in staged:
            os.replace(tmp, path)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, allow_nan=True))


def _grid(text, name):
    """``a:b:step`` (inclusive) or a comma separated list."""
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            n = int(math.floor((b - a) / step + 1e-9))
            return [round(a + k * step, 12) for k in range(n + 1)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{name}: expected 'a:b:step' or a comma list, got {text!r}") from None


def _fmt(x):
    return None if x is None or (isinstance(x, float) and math.isinf(x)) else x


# --------------------------------------------------------------------------
# commands


def cmd_gen_trace(args, out):
    cfg = load_config(args.config)
    if cfg.mobility is None:
        raise ConfigError("gen-trace needs a 'mobility' section")
    mob = cfg.mobility if args.seed is None else cfg.mobility.replace(rng_seed=args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        trace = generate_contact_trace(mob)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out.add(args.out, trace.to_csv(comment=_header(cfg, "gen-trace", rng_seed=mob.rng_seed)))
    _emit({"events": len(trace), "n_nodes": trace.n_nodes, "duration_h": trace.duration_h,
           "out": str(args.out)})


def cmd_estimate_rate(args, out):
    trace = import_contact_csv(args.trace)
    est = estimate_pairwise_meeting_rate(trace)
    lo, hi = est.confidence_interval()
    doc = {
        "empirical_pair_rate_per_h": est.rate,
        "empirical_ci95": [lo, hi],
        "empirical_aggregate_rate_per_h": est.rate * trace.n_nodes,
        "mean_inter_meeting_h": None if math.isnan(est.mean_inter_meeting_h) else est.mean_inter_meeting_h,
        "contacts": est.n_contacts,
        "n_nodes": trace.n_nodes,
        "duration_h": trace.duration_h,
    }
    if args.config:
        cfg = load_config(args.config)
        if cfg.mobility is None:
            raise ConfigError("estimate-rate --config needs a 'mobility' section")
        beta = analytic_meeting_rate(cfg.mobility)
        doc["analytic_pair_rate_per_h"] = beta
        doc["analytic_aggregate_rate_per_h"] = beta * cfg.mobility.n_nodes
        doc["empirical_over_analytic"] = est.rate / beta if beta else None
    _emit(doc)


def cmd_attack(args, out):
    cfg = load_config(args.config)
    scenario = build_scenario(cfg)
    if args.tg_grid:
        grid = _grid(args.tg_grid, "--tg-grid")
        points = tradeoff_curve(scenario, cfg.attack, grid, cfg.trials, cfg.master_seed)
        out.add(args.out, tradeoff_to_csv(points, comment=_header(cfg, "attack", tg_grid=args.tg_grid)))
        for p in points:
            _emit({"T_G_h": p.T_G_h, "success_rate": p.success_rate, "wilson_lo": p.wilson_lo,
                   "wilson_hi": p.wilson_hi, "mean_risk": p.mean_risk,
                   "mean_risk_to_timeout": p.mean_risk_to_timeout})
        return
    tg = cfg.attack.T_G_h if args.tg is None else args.tg
    attack = cfg.attack.replace(T_G_h=tg)
    summary = run_monte_carlo(scenario, attack, cfg.trials, cfg.master_seed, keep_records=True)
    header = _header(cfg, "attack", tg=tg)
    out.add(args.out, summary.records_to_csv(comment=header))
    out.add(args.summary, summary.to_json(extra={"config_sha256": cfg.digest, "T_G_h": _fmt(tg)}))
    doc = summary.as_dict()
    doc["mean_risk_to_timeout"] = summary.mean_risk_to_timeout
    doc["T_G_h"] = _fmt(tg)
    _emit(doc)


def cmd_analytic(args, out):
    cfg = load_config(args.config)
    params = epidemic_params(cfg)
    model = args.model.upper()
    sol = analytic.solve_epidemic_ode(params, model, args.horizon, args.step)
    out.add(args.out, sol.to_csv(comment=_header(cfg, "analytic", model=model, horizon=args.horizon,
                                                  step=args.step)))
    doc = {"model": model, "N": params.N, "beta": params.beta, "gamma": params.gamma,
           "I0": params.I0, "Lambda": params.Lambda, "horizon_h": args.horizon,
           "success_at_horizon": float(sol.P[-1]), "risk_at_horizon": float(sol.area[-1] / params.N)}
    if args.reliability is not None:
        recovery = "SIR" if model == "SI" else model
        doc["reliability"] = args.reliability
        doc["optimal_timeout_h"] = analytic.optimal_timeout(params, args.reliability, recovery, args.step)
        doc["risk_at_optimal_timeout"] = analytic.expected_risk(params, doc["optimal_timeout_h"],
                                                                recovery, args.step)
    _emit(doc)


def cmd_opt_timeout(args, out):
    cfg = load_config(args.config)
    scenario = build_scenario(cfg)
    res = min_timeout_mc(scenario, cfg.attack, args.reliability, cfg.trials, cfg.master_seed)
    doc = {"reliability": args.reliability, "mc_timeout_h": res.T_G_h, "mc_attainable": res.attainable,
           "mc_max_success": res.achieved_success, "trials": res.trials}
    try:
        params = epidemic_params(cfg)
        doc["analytic_timeout_h"] = analytic.optimal_timeout(params, args.reliability)
    except InfeasibleError as exc:
        doc["analytic_timeout_h"] = None
        doc["analytic_note"] = str(exc)
    except ConfigError as exc:
        doc["analytic_timeout_h"] = None
        doc["analytic_note"] = str(exc)
    _emit(doc)
    if not res.attainable:
        raise InfeasibleError(f"reliability {args.reliability} not reached within the horizon; "
                              f"maximum success {res.achieved_success}")


def cmd_opt_config(args, out):
    cfg = load_config(args.config)
    scenario = build_scenario(cfg)
    ps = _grid(args.ps_grid, "--ps-grid")
    pl = _grid(args.pl_grid, "--pl-grid")
    budget = math.inf if args.risk_budget.lower() in ("inf", "infinity") else float(args.risk_budget)
    res = constrained_config_search(scenario, cfg.attack, ps, pl, budget, cfg.trials,
                                    cfg.master_seed, risk_metric=args.risk_metric)
    out.add(args.out, res.to_csv(comment=_header(cfg, "opt-config", ps_grid=args.ps_grid,
                                                  pl_grid=args.pl_grid, risk_budget=args.risk_budget,
                                                  risk_metric=args.risk_metric,
                                                  risk_units=res.risk_units)))
    best = res.best
    _emit({"feasible_cells": len(res.feasible), "cells": len(res.cells), "risk_budget": _fmt(budget),
           "risk_metric": res.risk_metric,
           "best": None if best is None else {"p_s": best.p_s, "p_l": best.p_l,
                                              "success_rate": best.success_rate,
                                              "mean_risk": best.mean_risk}})


def _write_map(path, mapping, out):
    if path is None or mapping is None:
        return
    lines = ["original_id,node_id"] + [f"{k},{v}" for k, v in sorted(mapping.items(), key=lambda kv: kv[1])]
    out.add(path, "\n".join(lines) + "\n")


def _read_map(path):
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0].strip() != "original_id,node_id":
        raise DataError(f"{path}: expected header 'original_id,node_id'")
    mapping = {}
    for line_no, line in enumerate(rows[1:], start=2):
        if not line.strip():
            continue
        k, _, v = line.rpartition(",")
        try:
            mapping[k.strip()] = int(v)
        except ValueError:
            raise DataError(f"{path}: line {line_no}: bad node id {v!r}") from None
    return mapping


def cmd_import_trace(args, out):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        trace = import_contact_csv(args.input, n_nodes=args.n_nodes, duration_h=args.duration,
                                   remap=args.remap,
                                   id_map=_read_map(args.id_map) if args.id_map else None)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out.add(args.out, trace.to_csv())
    _write_map(args.map_out, trace.id_map, out)
    _emit({"events": len(trace), "n_nodes": trace.n_nodes, "duration_h": trace.duration_h})


def cmd_import_social(args, out):
    graph = import_social_csv(args.input, n_nodes=args.n_nodes, remap=args.remap,
                              id_map=_read_map(args.id_map) if args.id_map else None)
    out.add(args.out, graph.to_csv(comment=f"n_nodes={graph.n_nodes}"))
    _write_map(args.map_out, graph.id_map if args.remap else None, out)
    _emit({"edges": len(graph), "n_nodes": graph.n_nodes})


def build_parser():
    p = argparse.ArgumentParser(prog="epidemica", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-trace", help="generate a synthetic contact trace")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="override mobility.rng_seed")
    s.set_defaults(func=cmd_gen_trace)

    s = sub.add_parser("estimate-rate", help="empirical (and analytic) pairwise meeting rate")
    s.add_argument("--trace", required=True)
    s.add_argument("--config", help="mobility config for the analytic rate")
    s.set_defaults(func=cmd_estimate_rate)

    s = sub.add_parser("attack", help="Monte Carlo summary or tradeoff curve")
    s.add_argument("--config", required=True)
    s.add_argument("--tg", type=float, help="global timeout in hours (default: attack.T_G_h)")
    s.add_argument("--tg-grid", help="timeouts as a:b:step or a comma list")
    s.add_argument("--out", required=True, help="per-trial CSV, or tradeoff CSV with --tg-grid")
    s.add_argument("--summary", help="summary JSON path (single timeout only)")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("analytic", help="ODE trajectories and the analytic optimal timeout")
    s.add_argument("--config", required=True)
    s.add_argument("--model", choices=["si", "sis", "sir"], default="si")
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--step", type=float, default=analytic.DEFAULT_STEP_H)
    s.add_argument("--reliability", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analytic)

    s = sub.add_parser("opt-timeout", help="smallest timeout for a reliability target")
    s.add_argument("--config", required=True)
    s.add_argument("--reliability", type=float, required=True)
    s.set_defaults(func=cmd_opt_timeout)

    s = sub.add_parser("opt-config", help="risk-constrained (p_s, p_l) grid search")
    s.add_argument("--config", required=True)
    s.add_argument("--ps-grid", required=True)
    s.add_argument("--pl-grid", required=True)
    s.add_argument("--risk-budget", default="inf")
    s.add_argument("--risk-metric", choices=["to_timeout", "stopped"], default="to_timeout")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_opt_config)

    for name, func, what in (("import-trace", cmd_import_trace, "contact"),
                             ("import-social", cmd_import_social, "social-graph")):
        s = sub.add_parser(name, help=f"validate and normalise a {what} CSV")
        s.add_argument("--in", dest="input", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--n-nodes", type=int)
        s.add_argument("--remap", action="store_true", help="renumber ids densely")
        s.add_argument("--id-map", help="apply an existing original_id,node_id mapping")
        s.add_argument("--map-out", help="where to write the id mapping")
        if name == "import-trace":
            s.add_argument("--duration", type=float, help="trace duration in hours")
        s.set_defaults(func=func)
    return p


def _fail(code, kind, message):
    print("error: " + json.dumps({"code": code, "kind": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = _Outputs()
    try:
        args.func(args, out)
        out.commit()
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (DataError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except InfeasibleError as exc:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
