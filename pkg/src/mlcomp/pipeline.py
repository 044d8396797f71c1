"""The fixed optimization pipeline: inline, unroll, cleanup, unroll again.

Decision sources follow the strict priority ordering: explicit user count,
then loop pragma, then an autotuner override for the region, then the ML
model (when enabled), then the built-in heuristic. Every advised decision is
recorded in the trace along with the features it saw, and the protocol verbs
the client sent during the run. When the model interface fails and
on_failure is "abort", compilation raises and produces nothing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace as dc_replace
from typing import Optional

from . import analysis, inline as inline_mod, unroll as unroll_mod
from .advice import ModelHandle
from .analysis import CallSiteRef, build_loop_forest, call_graph_sccs, call_sites
from .cleanup import cleanup_module
from .client import AdviceClient, TransportError, connect
from .features import FeatureVector, extract_fi_features, extract_lu_features
from .ir import Module, verify_module
from .unroll import (NO_UNROLL, UnrollConfig, UnrollDecision, UnrollType,
                     default_unroll_heuristic, derive_decision, unroll_legality)

PASS_ORDER = ("inline", "unroll#1", "cleanup", "unroll#2")

# decision sources, strongest first
USER_FLAG = "user-flag"
PRAGMA = "pragma"
AUTOTUNER = "autotuner"
ML_MODEL = "ml-model"
DEFAULT_HEURISTIC = "default-heuristic"

TYPE_NAMES = {UnrollType.NONE: "none", UnrollType.FULL: "full",
              UnrollType.PARTIAL: "partial", UnrollType.RUNTIME: "runtime"}


class CompilationAborted(Exception):
    pass


@dataclass
class PipelineConfig:
    enable_acpo_lu: bool = False
    enable_acpo_fi: bool = False
    user_unroll_count: Optional[int] = None
    on_failure: str = "abort"                  # or "fallback-heuristic"
    endpoint: str = "inproc"
    model_dir: Optional[str] = None
    lu_spec: str = "model-lu.acpo"
    fi_spec: str = "model-fi.acpo"
    spawn_server: bool = False
    connect_timeout: float = 10.0
    unroll: UnrollConfig = field(default_factory=UnrollConfig)
    inline_size_max: int = 12
    overrides: dict = field(default_factory=dict)  # region id -> chosen value


def resolve_unroll_source(loop_node, config: PipelineConfig,
                          region_id: Optional[str] = None) -> str:
    """Priority: user flag > pragma > autotuner override > ML > heuristic."""
    if config.user_unroll_count is not None:
        return USER_FLAG
    if loop_node.pragma_unroll is not None:
        return PRAGMA
    if region_id is not None and region_id in config.overrides:
        return AUTOTUNER
    if config.enable_acpo_lu:
        return ML_MODEL
    return DEFAULT_HEURISTIC


def resolve_inline_source(cs_id: str, config: PipelineConfig) -> str:
    if cs_id in config.overrides:
        return AUTOTUNER
    if config.enable_acpo_fi:
        return ML_MODEL
    return DEFAULT_HEURISTIC


@dataclass
class DecisionRecord:
    pass_name: str
    kind: str                 # "LU" | "FI"
    region_id: str
    source: str
    features: Optional[FeatureVector]
    advice: dict
    applied: dict
    note: str = ""


@dataclass
class PipelineTrace:
    decisions: list = field(default_factory=list)
    events: list = field(default_factory=list)       # protocol verbs sent
    timings: dict = field(default_factory=lambda: {
        "feature_collection": 0.0, "feature_set": 0.0,
        "inference": 0.0, "assignment": 0.0})

    def lu_decisions(self) -> list:
        return [d for d in self.decisions if d.kind == "LU"]

    def fi_decisions(self) -> list:
        return [d for d in self.decisions if d.kind == "FI"]

    def advised(self, kind: Optional[str] = None) -> list:
        """Decisions that actually consulted the model."""
        return [d for d in self.decisions if d.source == ML_MODEL
                and (kind is None or d.kind == kind)]

    def event_count(self, verb: str) -> int:
        return sum(1 for v in self.events if v == verb)

    # -- rendering -----------------------------------------------------

    def render_log(self) -> str:
        out = []
        for d in self.decisions:
            if d.kind == "LU":
                fn, loop_id = d.region_id.split(":", 1)
                out.append(f"Loop Unroll: F[{fn}] Loop {loop_id}")
                if d.features is not None:
                    out.append(f"  Loop Size = {int(d.features.get('Size'))}")
                out.append(f"  decision source: {d.source}")
                if d.source == ML_MODEL:
                    out.append("  --- ML advisor activated ---")
                    out.append("  Registering LU features: 30")
                    out.append("  Calling ML IF for inference")
                t = TYPE_NAMES[UnrollType(d.applied["type"])]
                count = d.applied["count"]
                out.append("  Final unroll type post-legality checks is: "
                           f"{t} with the unroll count of: {count}")
                if d.note:
                    out.append(f"  note: {d.note}")
                if d.applied["type"] == int(UnrollType.FULL):
                    out.append(f"  COMPLETELY UNROLLING loop with trip count {count}!")
                elif d.applied["type"] == int(UnrollType.NONE):
                    out.append("  NOT UNROLLING loop")
                else:
                    out.append("  UNROLLING loop")
            else:
                caller, _ = d.region_id.split(":", 1)
                out.append(f"Inlining calls in: {caller}")
                out.append(f"  callsite {d.region_id} -> {d.applied['callee']}")
                out.append(f"  decision source: {d.source}")
                if d.source == ML_MODEL:
                    out.append("  --- ML advisor activated ---")
                    out.append("  Registering FI features: 13")
                    out.append("  Calling ML IF for inference")
                out.append(f"  inline prediction: {int(d.applied['inline'])}")
                if d.applied["inline"]:
                    out.append(f"  Updated inlining SCC: ({caller})")
            out.append("-" * 44)
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        rows = ["region_id,pass,kind,feature_hash,advice,source,applied,note"]
        for d in self.decisions:
            fhash = d.features.digest() if d.features is not None else ""
            advice = ";".join(f"{k}={int(v)}" for k, v in sorted(d.advice.items()))
            applied = ";".join(f"{k}={v}" for k, v in sorted(d.applied.items()))
            rows.append(",".join([d.region_id, d.pass_name, d.kind, fhash,
                                  advice, d.source, applied, d.note]))
        return "\n".join(rows) + "\n"


def run_pipeline(module: Module, config: Optional[PipelineConfig] = None,
                 client: Optional[AdviceClient] = None):
    """Optimize a module; returns (module, trace).

    Raises CompilationAborted when ACPO is enabled, inference fails, and
    on_failure is "abort". A caller-provided client is left open; a client
    created here is closed before returning.
    """
    config = config or PipelineConfig()
    verify_module(module)
    trace = PipelineTrace()

    owns_client = False
    if client is None and (config.enable_acpo_lu or config.enable_acpo_fi):
        try:
            client = connect(config.endpoint, spawn=config.spawn_server,
                             model_dir=config.model_dir,
                             timeout=config.connect_timeout)
        except (TransportError, ValueError, OSError) as exc:
            raise CompilationAborted(f"model server unreachable: {exc}") from None
        owns_client = True

    events_start = len(client.events) if client else 0
    timings_start = dict(client.timings) if client else {}
    handles: dict[str, ModelHandle] = {}
    ctx = _Ctx(config=config, trace=trace, client=client, handles=handles)

    try:
        module = _inline_pass(module, ctx)
        module = _unroll_pass(module, ctx, "unroll#1")
        module = cleanup_module(module)
        module = _unroll_pass(module, ctx, "unroll#2")
        verify_module(module)
    finally:
        if client is not None:
            trace.events = client.events[events_start:]
            for verb in ("SET",):
                trace.timings["feature_set"] += (
                    client.timings.get(verb, 0.0) - timings_start.get(verb, 0.0))
            for verb in ("LOAD", "RUN", "GET"):
                trace.timings["inference"] += (
                    client.timings.get(verb, 0.0) - timings_start.get(verb, 0.0))
        if owns_client:
            client.close()
    return module, trace


@dataclass
class _Ctx:
    config: PipelineConfig
    trace: PipelineTrace
    client: Optional[AdviceClient]
    handles: dict


def _handle_for(ctx: _Ctx, kind: str) -> ModelHandle:
    if kind not in ctx.handles:
        config = ctx.config
        spec = config.lu_spec if kind == "LU" else config.fi_spec
        if config.model_dir:
            import os
            spec = os.path.join(config.model_dir, spec)
        ctx.handles[kind] = ModelHandle(kind, ctx.client, spec)
    return ctx.handles[kind]


def _ml_failure(ctx: _Ctx, kind: str, region_id: str, why: str):
    if ctx.config.on_failure == "fallback-heuristic":
        return
    raise CompilationAborted(
        f"{kind} inference failed for {region_id}: {why}")


# ---------------------------------------------------------------------------
# inline pass


def _inline_pass(module: Module, ctx: _Ctx) -> Module:
    config, trace = ctx.config, ctx.trace
    for scc in call_graph_sccs(module):
        order = [fn.name for fn in module.functions if fn.name in scc]
        for fname in order:
            sites = call_sites(module.function(fname))
            for site in reversed(sites):
                report = inline_mod.inline_legality(site, module)
                if not report.legal:
                    continue
                source = resolve_inline_source(site.id, config)
                features = None
                advice: dict = {}
                note = ""
                if source == AUTOTUNER:
                    t0 = time.perf_counter()
                    features = extract_fi_features(site, module)
                    trace.timings["feature_collection"] += time.perf_counter() - t0
                    should = bool(config.overrides[site.id])
                elif source == ML_MODEL:
                    t0 = time.perf_counter()
                    features = extract_fi_features(site, module)
                    trace.timings["feature_collection"] += time.perf_counter() - t0
                    handle = _handle_for(ctx, "FI")
                    handle.set_custom_features(features)
                    result = handle.get_advice()
                    if not result.present:
                        _ml_failure(ctx, "FI", site.id, handle.last_error or "?")
                        source = DEFAULT_HEURISTIC
                        note = "fallback after inference failure"
                        should = inline_mod.default_inline_heuristic(
                            module, site, config.inline_size_max)
                    else:
                        advice = dict(result.fields)
                        should = bool(result["FI-ShouldInline"])
                else:
                    should = inline_mod.default_inline_heuristic(
                        module, site, config.inline_size_max)
                t0 = time.perf_counter()
                if should:
                    module = inline_mod.apply_inline(module, site)
                trace.timings["assignment"] += time.perf_counter() - t0
                trace.decisions.append(DecisionRecord(
                    pass_name="inline", kind="FI", region_id=site.id,
                    source=source, features=features, advice=advice,
                    applied={"inline": should, "callee": site.callee},
                    note=note))
    return module


# ---------------------------------------------------------------------------
# unroll pass


def _unroll_pass(module: Module, ctx: _Ctx, pass_name: str) -> Module:
    config, trace = ctx.config, ctx.trace
    for fname in [fn.name for fn in module.functions]:
        for loop_id in _post_order_ids(module.function(fname)):
            fn = module.function(fname)
            forest = build_loop_forest(fn)
            try:
                loop = forest.by_id(loop_id)
            except KeyError:
                continue  # removed by an earlier decision in this pass
            if loop.node.no_unroll:
                continue
            if not unroll_legality(loop, forest, config.unroll).legal:
                continue
            region_id = f"{fname}:{loop_id}"
            source = resolve_unroll_source(loop.node, config, region_id)
            trip = loop.trip_count()
            features = None
            advice: dict = {}
            note = ""
            if source == USER_FLAG:
                decision = derive_decision(config.user_unroll_count, trip)
            elif source == PRAGMA:
                decision = derive_decision(loop.node.pragma_unroll, trip)
            elif source == AUTOTUNER:
                t0 = time.perf_counter()
                features = extract_lu_features(loop, config.unroll)
                trace.timings["feature_collection"] += time.perf_counter() - t0
                decision = derive_decision(config.overrides[region_id], trip)
            elif source == ML_MODEL:
                t0 = time.perf_counter()
                features = extract_lu_features(loop, config.unroll)
                trace.timings["feature_collection"] += time.perf_counter() - t0
                handle = _handle_for(ctx, "LU")
                handle.set_custom_features(features)
                result = handle.get_advice()
                if not result.present:
                    _ml_failure(ctx, "LU", region_id, handle.last_error or "?")
                    source = DEFAULT_HEURISTIC
                    note = "fallback after inference failure"
                    decision = default_unroll_heuristic(loop, config.unroll)
                else:
                    advice = dict(result.fields)
                    decision = derive_decision(result["LU-Count"], trip)
                    if decision.type != UnrollType(result["LU-Type"]):
                        adv = TYPE_NAMES.get(UnrollType(result["LU-Type"]),
                                             str(result["LU-Type"]))
                        note = (f"advice type {adv} re-validated to "
                                f"{TYPE_NAMES[decision.type]}")
            else:
                decision = default_unroll_heuristic(loop, config.unroll)

            t0 = time.perf_counter()
            if not decision.is_noop():
                new_fn = unroll_mod.apply_unroll(fn, loop_id, decision)
                module = module.replace_function(new_fn)
            trace.timings["assignment"] += time.perf_counter() - t0
            trace.decisions.append(DecisionRecord(
                pass_name=pass_name, kind="LU", region_id=region_id,
                source=source, features=features, advice=advice,
                applied={"type": int(decision.type), "count": decision.count},
                note=note))
    return module


def _post_order_ids(fn) -> list[str]:
    forest = build_loop_forest(fn)
    order: list[str] = []

    def walk(loop):
        for child in loop.children:
            walk(child)
        order.append(loop.id)

    for root in forest.roots:
        walk(root)
    return order
