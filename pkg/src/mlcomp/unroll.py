"""Loop unrolling: legality, decision forms, and the transform.

Decision forms mirror the advice fields: a type (none/full/partial/runtime)
plus a count. `derive_decision` maps a bare count onto the right type for a
loop's trip count and is the single place that rule lives; the server's
LU-Type output and the pass's re-validation both use it.

Transformed loops and the loops they spawn are marked no_unroll so a second
unroll pass instance leaves them alone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional, Union

from .analysis import CycleRegion, ForestLoop, LoopForest
from .ir import Block, CountedLoop, Function, Instr, Operand


class UnrollType(IntEnum):
    NONE = 0
    FULL = 1
    PARTIAL = 2
    RUNTIME = 3


@dataclass(frozen=True)
class UnrollDecision:
    type: UnrollType
    count: int

    def is_noop(self) -> bool:
        return self.type == UnrollType.NONE


NO_UNROLL = UnrollDecision(UnrollType.NONE, 0)


@dataclass(frozen=True)
class UnrollConfig:
    """Unroll pass configuration; the first five fields feed the feature set."""
    partial_opt_size_threshold: int = 0
    allow_remainder: bool = True
    unroll_remainder: bool = False
    allow_expensive_trip_count: bool = False
    force: bool = False
    size_cap: int = 128            # legality: max body instructions
    heuristic_trip_max: int = 8    # default heuristic: full unroll bounds
    heuristic_size_max: int = 16


@dataclass(frozen=True)
class LegalityReport:
    legal: bool
    reasons: tuple[str, ...] = ()


class UnrollError(Exception):
    pass


def derive_decision(count: int, trip_count: Optional[int]) -> UnrollDecision:
    """Canonical count -> (type, count) rule.

    Counts of 0/1 mean no unrolling. With a known trip count, counts at or
    above it collapse to a full unroll at exactly the trip count; below it,
    a partial unroll. Unknown trip counts take the runtime-guarded form.
    """
    if count <= 1:
        return NO_UNROLL
    if trip_count is None:
        return UnrollDecision(UnrollType.RUNTIME, count)
    if count >= trip_count:
        return UnrollDecision(UnrollType.FULL, trip_count)
    return UnrollDecision(UnrollType.PARTIAL, count)


def default_unroll_heuristic(loop: ForestLoop, config: UnrollConfig) -> UnrollDecision:
    """The replaced baseline: full unroll for small, short counted loops."""
    trip = loop.trip_count()
    if trip is not None and trip <= config.heuristic_trip_max \
            and loop.all_instr_count() <= config.heuristic_size_max:
        return derive_decision(max(trip, 2), trip)
    return NO_UNROLL


def unroll_legality(loop: Union[ForestLoop, CycleRegion], forest: LoopForest,
                    config: Optional[UnrollConfig] = None) -> LegalityReport:
    """Legality, checked before any profitability advice is requested."""
    config = config or UnrollConfig()
    if isinstance(loop, CycleRegion):
        reason = "irreducible" if loop.irreducible else "not-counted"
        return LegalityReport(False, (reason,))

    reasons = []
    if loop.node.no_unroll:
        reasons.append("disabled")
    header = loop.header
    member_labels = {b.label for b in loop.all_blocks()}
    backedges = 0
    for block in loop.own_blocks():
        for instr in block.instrs:
            if instr.op == "br" and instr.args[0] == header:
                backedges += 1
            elif instr.op == "cbr" and header in instr.args[1:]:
                backedges += 1
    if backedges > 0:
        reasons.append("backedge")
    for cycle in forest.cycles:
        if cycle.irreducible and set(cycle.blocks) & member_labels:
            reasons.append("irreducible")
            break
    if _has_escaping_branch(loop.node):
        reasons.append("escape")
    if loop.all_instr_count() > config.size_cap:
        reasons.append("size")
    return LegalityReport(not reasons, tuple(reasons))


def _has_escaping_branch(loop: CountedLoop) -> bool:
    """True when a branch inside the loop targets a label outside it."""

    def walk(items, visible: set) -> bool:
        local = visible | {i.label for i in items if isinstance(i, Block)}
        for item in items:
            if isinstance(item, CountedLoop):
                if walk(item.body, local):
                    return True
                continue
            for instr in item.instrs:
                targets = ()
                if instr.op == "br":
                    targets = (instr.args[0],)
                elif instr.op == "cbr":
                    targets = instr.args[1:]
                if any(t not in local for t in targets):
                    return True
        return False

    return walk(loop.body, set())


# ---------------------------------------------------------------------------
# the transform


def apply_unroll(fn: Function, loop_id: str, decision: UnrollDecision) -> Function:
    """Return fn with the decision applied to the named loop.

    NONE decisions return fn unchanged. FULL requires a known trip count and
    count == trip count; PARTIAL requires a known trip count and
    2 <= count < trip count; RUNTIME requires count >= 2.
    """
    if decision.is_noop():
        return fn
    items, found = _rewrite_region(fn.body, loop_id, decision)
    if not found:
        raise UnrollError(f"loop '{loop_id}' not found in '{fn.name}'")
    return replace(fn, body=tuple(items))


def _rewrite_region(items: tuple, loop_id: str, decision: UnrollDecision):
    out = []
    found = False
    for item in items:
        if isinstance(item, CountedLoop):
            if item.id == loop_id:
                out.extend(_unroll_loop(item, decision))
                found = True
                continue
            body, sub = _rewrite_region(item.body, loop_id, decision)
            if sub:
                found = True
                item = replace(item, body=tuple(body))
        out.append(item)
    return out, found


def _unroll_loop(loop: CountedLoop, decision: UnrollDecision) -> list:
    trip = loop.trip_count()
    if decision.type == UnrollType.FULL:
        if trip is None:
            raise UnrollError(f"full unroll of '{loop.id}' needs a known trip count")
        if decision.count != trip:
            raise UnrollError(f"full unroll of '{loop.id}' must use count {trip}")
        return _full_unroll(loop, trip)
    if decision.type == UnrollType.PARTIAL:
        if trip is None:
            raise UnrollError(f"partial unroll of '{loop.id}' needs a known trip count")
        if not 2 <= decision.count < trip:
            raise UnrollError(f"partial count {decision.count} out of range for "
                              f"'{loop.id}' (trip {trip})")
        return _partial_unroll(loop, trip, decision.count)
    if decision.type == UnrollType.RUNTIME:
        if decision.count < 2:
            raise UnrollError(f"runtime unroll of '{loop.id}' needs count >= 2")
        return _runtime_unroll(loop, decision.count)
    raise UnrollError(f"cannot apply decision {decision}")


def _full_unroll(loop: CountedLoop, trip: int) -> list:
    items: list = []
    for j in range(trip):
        iv_value = loop.init + j * loop.step
        items.extend(_copy_body(loop.body, tag=f"f{j}",
                                iv=loop.id, iv_repl=iv_value))
    exit_value = loop.init + trip * loop.step
    items.append(Block(label=f"{loop.id}.exit",
                       instrs=(Instr("mov", loop.id, (exit_value,)),)))
    return items


def _partial_unroll(loop: CountedLoop, trip: int, count: int) -> list:
    q, r = divmod(trip, count)
    body: list = []
    for k in range(count):
        if k == 0:
            body.extend(_copy_body(loop.body, tag="u0", iv=loop.id, iv_repl=None))
        else:
            offset = Block(label=f"{loop.id}.off{k}",
                           instrs=(Instr("add", f"{loop.id}.{k}",
                                         (loop.id, k * loop.step)),))
            body.append(offset)
            body.extend(_copy_body(loop.body, tag=f"u{k}", iv=loop.id,
                                   iv_repl=f"{loop.id}.{k}"))
    main = CountedLoop(id=loop.id, init=loop.init,
                       bound=loop.init + q * count * loop.step,
                       step=count * loop.step, body=tuple(body),
                       pragma_unroll=None, no_unroll=True)
    items: list = [main]
    for j in range(r):
        iv_value = loop.init + (q * count + j) * loop.step
        items.extend(_copy_body(loop.body, tag=f"e{j}", iv=loop.id,
                                iv_repl=iv_value))
    if r:
        exit_value = loop.init + trip * loop.step
        items.append(Block(label=f"{loop.id}.exit",
                           instrs=(Instr("mov", loop.id, (exit_value,)),)))
    return items


def _runtime_unroll(loop: CountedLoop, count: int) -> list:
    pre_instrs = []
    bound: Operand = loop.bound
    if not isinstance(bound, int):
        pre_instrs.append(Instr("mov", f"{loop.id}.bnd", (bound,)))
        bound = f"{loop.id}.bnd"
    main_margin = (count - 1) * loop.step
    if isinstance(bound, int):
        main_bound: Operand = bound - main_margin
    else:
        pre_instrs.append(Instr("sub", f"{loop.id}.bmain", (bound, main_margin)))
        main_bound = f"{loop.id}.bmain"
    body: list = []
    for k in range(count):
        if k == 0:
            body.extend(_copy_body(loop.body, tag="u0", iv=loop.id, iv_repl=None))
        else:
            offset = Block(label=f"{loop.id}.off{k}",
                           instrs=(Instr("add", f"{loop.id}.{k}",
                                         (loop.id, k * loop.step)),))
            body.append(offset)
            body.extend(_copy_body(loop.body, tag=f"u{k}", iv=loop.id,
                                   iv_repl=f"{loop.id}.{k}"))
    main = CountedLoop(id=loop.id, init=loop.init, bound=main_bound,
                       step=count * loop.step, body=tuple(body),
                       pragma_unroll=None, no_unroll=True)
    rem_body = _copy_body(loop.body, tag="r", iv=loop.id, iv_repl=f"{loop.id}.rem")
    rem = CountedLoop(id=f"{loop.id}.rem", init=loop.id, bound=bound,
                      step=loop.step, body=tuple(rem_body),
                      pragma_unroll=None, no_unroll=True)
    fixup = Block(label=f"{loop.id}.exit",
                  instrs=(Instr("mov", loop.id, (f"{loop.id}.rem",)),))
    items: list = []
    if pre_instrs:
        items.append(Block(label=f"{loop.id}.pre", instrs=tuple(pre_instrs)))
    items.extend([main, rem, fixup])
    return items


def _copy_body(items: tuple, tag: str, iv: str, iv_repl) -> list:
    """Copy a loop body with labels and nested loop ids suffixed by `tag`.

    `iv_repl` substitutes reads of the induction variable: None keeps them,
    an int inlines a literal, a str renames the register.
    """
    label_map = {}
    reg_map = {}
    _collect_renames(items, tag, label_map, reg_map)
    if iv_repl is not None:
        reg_map[iv] = iv_repl
    return [_copy_item(item, label_map, reg_map) for item in items]


def _collect_renames(items: tuple, tag: str, label_map: dict, reg_map: dict) -> None:
    for item in items:
        if isinstance(item, Block):
            label_map[item.label] = f"{item.label}.{tag}"
        else:
            reg_map[item.id] = f"{item.id}.{tag}"
            _collect_renames(item.body, tag, label_map, reg_map)


def _copy_item(item, label_map: dict, reg_map: dict):
    if isinstance(item, Block):
        return Block(label=label_map[item.label],
                     instrs=tuple(_copy_instr(i, label_map, reg_map)
                                  for i in item.instrs))
    return CountedLoop(id=reg_map[item.id],
                       init=_sub_operand(item.init, reg_map),
                       bound=_sub_operand(item.bound, reg_map),
                       step=item.step,
                       body=tuple(_copy_item(x, label_map, reg_map)
                                  for x in item.body),
                       pragma_unroll=None, no_unroll=True)


def _copy_instr(instr: Instr, label_map: dict, reg_map: dict) -> Instr:
    dst = reg_map.get(instr.dst, instr.dst) if instr.dst else None
    op, a = instr.op, instr.args
    if op in ("add", "sub", "mul", "mov", "ret"):
        args = tuple(_sub_operand(x, reg_map) for x in a)
    elif op == "load":
        args = (a[0], _sub_operand(a[1], reg_map))
    elif op == "store":
        args = (a[0], _sub_operand(a[1], reg_map), _sub_operand(a[2], reg_map))
    elif op == "call":
        args = (a[0], *(_sub_operand(x, reg_map) for x in a[1:]))
    elif op == "br":
        args = (label_map.get(a[0], a[0]),)
    elif op == "cbr":
        args = (_sub_operand(a[0], reg_map),
                label_map.get(a[1], a[1]), label_map.get(a[2], a[2]))
    else:
        args = a
    return Instr(op, dst, args)


def _sub_operand(operand: Operand, reg_map: dict) -> Operand:
    if isinstance(operand, str):
        return reg_map.get(operand, operand)
    return operand
