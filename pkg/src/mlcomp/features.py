"""Feature extraction for the loop-unroll and inline models.

The two schemas are fixed: 30 ordered loop features and 13 ordered callsite
features. Wire order equals schema order and is what the model spec files
register, so everything downstream (protocol SET payloads, trial logs,
training matrices) indexes features identically. The text schema files under
schemas/ are the versioned external form; `load_schema` reads them and the
test suite pins them against the constants here.

Feature semantics notes (the names alone do not pin these down):
  * Unknown quantities use sentinel 0 (trip counts, literal iv bounds).
  * "PerLoop" counts cover the loop's own blocks, excluding nested loops;
    "PerLoopNest" covers the outermost enclosing nest, including everything.
  * "Avg" features divide by the relevant block count.
  * NumPartitions is 1 + the number of branch instructions in the loop's own
    blocks (straight-line segments between branches).
  * IndVarSetSize counts the iv plus body registers with exactly one update
    of the form r = add/sub r, <step> where the step is loop-invariant.
  * Callsite block_frequency uses the interpreter profile when given (total
    iterations of the innermost enclosing loop), else the static estimate
    8 ** loop_depth.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from . import analysis
from .analysis import CallSiteRef, ForestLoop
from .interp import ExecutionProfile
from .ir import Block, Function, Instr, Module
from .unroll import UnrollConfig
from .wire import format_number

SCHEMA_VERSION = 1

LU_FEATURES: tuple[tuple[str, str], ...] = (
    ("PartialOptSizeThreshold", "int"),
    ("AllowRemainder", "int"),
    ("UnrollRemainder", "int"),
    ("AllowExpensiveTripCount", "int"),
    ("Force", "int"),
    ("TripCount", "int"),
    ("MaxTripCount", "int"),
    ("Size", "int"),
    ("InitialIVValueInt", "int"),
    ("FinalIVValueInt", "int"),
    ("StepValueInt", "int"),
    ("NumPartitions", "int"),
    ("IndVarSetSize", "int"),
    ("AvgStoreSetSize", "float"),
    ("AvgNumInsts", "float"),
    ("NumLoadInstPerLoopNest", "int"),
    ("NumStoreInstPerLoopNest", "int"),
    ("TotLoopNestInstCount", "int"),
    ("AvgNumLoadInstPerLoopNest", "float"),
    ("AvgNumStoreInstPerLoopNest", "float"),
    ("NumLoadInstPerLoop", "int"),
    ("NumStoreInstPerLoop", "int"),
    ("TotLoopInstCount", "int"),
    ("AvgNumLoadInstPerLoop", "float"),
    ("AvgNumStoreInstPerLoop", "float"),
    ("IsInnerMostLoop", "int"),
    ("IsOuterMostLoop", "int"),
    ("MaxLoopHeight", "int"),
    ("TotBlocksPerLoop", "int"),
    ("IsFixedTripCount", "int"),
)

FI_FEATURES: tuple[tuple[str, str], ...] = (
    ("block_frequency", "float"),
    ("callsite_height", "int"),
    ("caller_block_count", "int"),
    ("callee_block_count", "int"),
    ("caller_users", "int"),
    ("callee_users", "int"),
    ("callee_instruction_count", "int"),
    ("caller_instruction_count", "int"),
    ("callsite_loop_depth", "int"),
    ("callee_call_count", "int"),
    ("is_callee_leaf", "int"),
    ("num_args", "int"),
    ("callee_max_loop_depth", "int"),
)

SCHEMAS = {"LU": LU_FEATURES, "FI": FI_FEATURES}


class FeatureError(Exception):
    pass


@dataclass(frozen=True)
class FeatureVector:
    kind: str  # "LU" | "FI"
    values: tuple[tuple[str, float], ...]
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        expected = SCHEMAS.get(self.kind)
        if expected is None:
            raise FeatureError(f"unknown feature kind '{self.kind}'")
        names = tuple(name for name, _ in self.values)
        if names != tuple(name for name, _ in expected):
            raise FeatureError(
                f"{self.kind} vector has {len(names)} features; expected the "
                f"{len(expected)}-entry schema order")

    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.values)

    def numbers(self) -> tuple[float, ...]:
        return tuple(value for _, value in self.values)

    def get(self, name: str) -> float:
        for n, v in self.values:
            if n == name:
                return v
        raise KeyError(name)

    def canonical(self) -> str:
        return ",".join(f"{n}={format_number(v)}" for n, v in self.values)

    def digest(self) -> str:
        return hashlib.sha1(self.canonical().encode()).hexdigest()[:16]


def load_schema(kind: str, version: int = SCHEMA_VERSION) -> tuple[tuple[str, str], ...]:
    """Read the versioned schema file: `index name type` lines."""
    fname = f"{kind.lower()}-features-v{version}.txt"
    text = resources.files("mlcomp").joinpath("schemas", fname).read_text()
    entries = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        idx, name, typ = line.split()
        if int(idx) != len(entries):
            raise FeatureError(f"{fname}: index gap at '{line}'")
        entries.append((name, typ))
    return tuple(entries)


# ---------------------------------------------------------------------------
# loop features


def extract_lu_features(loop: ForestLoop, config: Optional[UnrollConfig] = None) -> FeatureVector:
    config = config or UnrollConfig()
    own = loop.own_blocks()
    nest = loop.root().all_blocks()
    node = loop.node
    trip = loop.trip_count()

    own_instrs = sum(len(b.instrs) for b in own)
    own_loads = _count_op(own, "load")
    own_stores = _count_op(own, "store")
    nest_instrs = sum(len(b.instrs) for b in nest)
    nest_loads = _count_op(nest, "load")
    nest_stores = _count_op(nest, "store")
    n_own = max(1, len(own))
    n_nest = max(1, len(nest))

    values = (
        ("PartialOptSizeThreshold", config.partial_opt_size_threshold),
        ("AllowRemainder", int(config.allow_remainder)),
        ("UnrollRemainder", int(config.unroll_remainder)),
        ("AllowExpensiveTripCount", int(config.allow_expensive_trip_count)),
        ("Force", int(config.force)),
        ("TripCount", trip if trip is not None else 0),
        ("MaxTripCount", trip if trip is not None else 0),
        ("Size", own_instrs),
        ("InitialIVValueInt", node.init if isinstance(node.init, int) else 0),
        ("FinalIVValueInt", node.bound if isinstance(node.bound, int) else 0),
        ("StepValueInt", node.step),
        ("NumPartitions", 1 + _count_branches(own)),
        ("IndVarSetSize", 1 + _induction_like(loop)),
        ("AvgStoreSetSize", _avg_store_set_size(own)),
        ("AvgNumInsts", own_instrs / n_own),
        ("NumLoadInstPerLoopNest", nest_loads),
        ("NumStoreInstPerLoopNest", nest_stores),
        ("TotLoopNestInstCount", nest_instrs),
        ("AvgNumLoadInstPerLoopNest", nest_loads / n_nest),
        ("AvgNumStoreInstPerLoopNest", nest_stores / n_nest),
        ("NumLoadInstPerLoop", own_loads),
        ("NumStoreInstPerLoop", own_stores),
        ("TotLoopInstCount", loop.all_instr_count()),
        ("AvgNumLoadInstPerLoop", own_loads / n_own),
        ("AvgNumStoreInstPerLoop", own_stores / n_own),
        ("IsInnerMostLoop", int(not loop.children)),
        ("IsOuterMostLoop", int(loop.parent is None)),
        ("MaxLoopHeight", loop.root().height()),
        ("TotBlocksPerLoop", len(loop.all_blocks())),
        ("IsFixedTripCount", int(trip is not None)),
    )
    return FeatureVector(kind="LU", values=values)


def _count_op(blocks, op: str) -> int:
    return sum(1 for b in blocks for i in b.instrs if i.op == op)


def _count_branches(blocks) -> int:
    return sum(1 for b in blocks for i in b.instrs if i.op in ("br", "cbr"))


def _avg_store_set_size(blocks) -> float:
    if not blocks:
        return 0.0
    total = 0
    for block in blocks:
        targets = {(i.args[0], str(i.args[1])) for i in block.instrs
                   if i.op == "store"}
        total += len(targets)
    return total / len(blocks)


def _induction_like(loop: ForestLoop) -> int:
    """Registers with exactly one self-update by a loop-invariant step."""
    varying = {loop.id}
    for inner in _nested_loops(loop.node.body):
        varying.add(inner.id)
    for block in loop.all_blocks():
        for instr in block.instrs:
            if instr.dst is not None:
                varying.add(instr.dst)
    updates: dict[str, list[Instr]] = {}
    for block in loop.own_blocks():
        for instr in block.instrs:
            if instr.dst is not None:
                updates.setdefault(instr.dst, []).append(instr)
    count = 0
    for reg, instrs in updates.items():
        if reg == loop.id or len(instrs) != 1:
            continue
        instr = instrs[0]
        if instr.op not in ("add", "sub") or instr.args[0] != reg:
            continue
        step = instr.args[1]
        if isinstance(step, int) or step not in varying:
            count += 1
    return count


def _nested_loops(items):
    for item in items:
        if not isinstance(item, Block):
            yield item
            yield from _nested_loops(item.body)


# ---------------------------------------------------------------------------
# callsite features


def extract_fi_features(cs: CallSiteRef, module: Module,
                        profile: Optional[ExecutionProfile] = None) -> FeatureVector:
    caller = module.function(cs.caller)
    callee = module.function(cs.callee)
    call_instr = _find_call(caller, cs.index)
    depths = analysis.block_loop_depth(caller)
    depth = depths[cs.block]

    values = (
        ("block_frequency", _block_frequency(cs, caller, depth, profile)),
        ("callsite_height", analysis.callee_height(module, cs.callee)),
        ("caller_block_count", len(list(caller.iter_blocks()))),
        ("callee_block_count", len(list(callee.iter_blocks()))),
        ("caller_users", _users(module, cs.caller)),
        ("callee_users", _users(module, cs.callee)),
        ("callee_instruction_count", callee.instr_count()),
        ("caller_instruction_count", caller.instr_count()),
        ("callsite_loop_depth", depth),
        ("callee_call_count", len(analysis.call_sites(callee))),
        ("is_callee_leaf", int(not analysis.call_sites(callee))),
        ("num_args", len(call_instr.args) - 1),
        ("callee_max_loop_depth", _max_loop_depth(callee)),
    )
    return FeatureVector(kind="FI", values=values)


def _find_call(fn: Function, index: int) -> Instr:
    k = 0
    for block in fn.iter_blocks():
        for instr in block.instrs:
            if instr.op == "call":
                if k == index:
                    return instr
                k += 1
    raise FeatureError(f"no call #{index} in '{fn.name}'")


def _users(module: Module, name: str) -> int:
    return sum(1 for fn in module.functions
               for s in analysis.call_sites(fn) if s.callee == name)


def _block_frequency(cs: CallSiteRef, caller: Function, depth: int,
                     profile: Optional[ExecutionProfile]) -> float:
    if profile is not None:
        forest = analysis.build_loop_forest(caller)
        owner = analysis.innermost_loop_of_block(forest)
        loop = owner.get(cs.block)
        if loop is None:
            return 1.0
        return float(profile.per_loop_iterations.get(f"{caller.name}:{loop.id}", 0))
    return float(8 ** depth)


def _max_loop_depth(fn: Function) -> int:
    forest = analysis.build_loop_forest(fn)
    return max((loop.depth for loop in forest.loops), default=0)


# ---------------------------------------------------------------------------
# correlation analysis


@dataclass
class CorrelationReport:
    r: dict[str, float]
    zero_variance: set[str]
    threshold: float

    @property
    def selected(self) -> set[str]:
        return {name for name, value in self.r.items()
                if abs(value) >= self.threshold and name not in self.zero_variance}


def pearson(x, y) -> float:
    """Pearson r; returns 0.0 when either side has zero variance."""
    r, _ = pearson_flagged(x, y)
    return r


def pearson_flagged(x, y) -> tuple[float, bool]:
    """(r, defined); defined is False on zero variance, with r forced to 0."""
    n = len(x)
    if n != len(y):
        raise FeatureError("pearson needs equal-length inputs")
    if n < 2:
        raise FeatureError("pearson needs at least 2 points")
    mx = sum(x) / n
    my = sum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = sum(v * v for v in dx)
    syy = sum(v * v for v in dy)
    if sxx == 0 or syy == 0:
        return 0.0, False
    sxy = sum(a * b for a, b in zip(dx, dy))
    r = sxy / (sxx ** 0.5 * syy ** 0.5)
    return max(-1.0, min(1.0, r)), True


def correlation_report(rows, labels, threshold: float = 0.05) -> CorrelationReport:
    """Per-feature correlation against the label over FeatureVector rows."""
    if not rows:
        raise FeatureError("empty dataset")
    names = rows[0].names()
    r: dict[str, float] = {}
    zero = set()
    labels = [float(v) for v in labels]
    for i, name in enumerate(names):
        xs = [row.numbers()[i] for row in rows]
        value, defined = pearson_flagged(xs, labels)
        r[name] = value
        if not defined:
            zero.add(name)
    return CorrelationReport(r=r, zero_variance=zero, threshold=threshold)
