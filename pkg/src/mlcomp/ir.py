"""Core IR: modules, functions, blocks, counted loops, instructions.

The IR is structured: a function body is an ordered list of items, where an
item is either a labeled basic block or a counted loop whose body is again a
list of items. Counted loops own their induction variable (the loop id names
the register holding it). Branches may only target labels within the same
region (function top level or one loop body); cycles built out of raw
branches are representable but are not counted loops.

IR values are immutable after construction; transformations build new nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Optional, Union

# Operands are integer literals or register names.
Operand = Union[int, str]

OPCODES = ("add", "sub", "mul", "mov", "load", "store", "call", "br", "cbr", "ret")
BRANCH_OPS = ("br", "cbr")
ENTRY_FUNCTION = "main"


class IRError(Exception):
    """Structural error in a module (verification failure)."""


@dataclass(frozen=True)
class Instr:
    """One instruction.

    Argument layout per opcode:
      add/sub/mul: (a, b), dst set
      mov:         (a,), dst set
      load:        (array, index), dst set
      store:       (array, index, value)
      call:        (callee, arg...), dst optional
      br:          (label,)
      cbr:         (cond, then_label, else_label)
      ret:         (value,)
    """
    op: str
    dst: Optional[str] = None
    args: tuple = ()

    def is_branch(self) -> bool:
        return self.op in BRANCH_OPS

    def is_terminator(self) -> bool:
        return self.op in ("br", "cbr", "ret")


@dataclass(frozen=True)
class Block:
    label: str
    instrs: tuple[Instr, ...] = ()

    def terminator(self) -> Optional[Instr]:
        if self.instrs and self.instrs[-1].is_terminator():
            return self.instrs[-1]
        return None


@dataclass(frozen=True)
class CountedLoop:
    """A counted loop; `id` also names the induction-variable register.

    Runs the body with iv = init, init+step, ... while iv is strictly on the
    init side of `bound` (< for positive step, > for negative). `init` and
    `bound` are integer literals or registers read once at loop entry; the iv
    register keeps its last value after the loop exits.
    """
    id: str
    init: Operand
    bound: Operand
    step: int
    body: tuple["Item", ...] = ()
    pragma_unroll: Optional[int] = None
    no_unroll: bool = False

    def trip_count(self) -> Optional[int]:
        """Static trip count, or None unless both init and bound are literals."""
        if not isinstance(self.bound, int) or not isinstance(self.init, int):
            return None
        return static_trip_count(self.init, self.bound, self.step)


Item = Union[Block, CountedLoop]


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[str, ...] = ()
    body: tuple[Item, ...] = ()

    def iter_blocks(self) -> Iterator[Block]:
        """All blocks in textual order, descending into loop bodies."""
        yield from _iter_blocks(self.body)

    def iter_loops(self) -> Iterator[CountedLoop]:
        """All counted loops in textual order, outermost first."""
        yield from _iter_loops(self.body)

    def iter_instrs(self) -> Iterator[Instr]:
        for block in self.iter_blocks():
            yield from block.instrs

    def instr_count(self) -> int:
        return sum(len(b.instrs) for b in self.iter_blocks())


@dataclass(frozen=True)
class Module:
    name: str
    functions: tuple[Function, ...] = ()
    entry: str = ENTRY_FUNCTION

    def function(self, name: str) -> Function:
        for fn in self.functions:
            if fn.name == name:
                return fn
        raise KeyError(name)

    def has_function(self, name: str) -> bool:
        return any(fn.name == name for fn in self.functions)

    def replace_function(self, new_fn: Function) -> "Module":
        fns = tuple(new_fn if fn.name == new_fn.name else fn for fn in self.functions)
        return replace(self, functions=fns)

    def instr_count(self) -> int:
        return sum(fn.instr_count() for fn in self.functions)

    def size(self) -> int:
        """Static size: instructions plus 2 overhead slots per counted loop."""
        loops = sum(len(list(fn.iter_loops())) for fn in self.functions)
        return self.instr_count() + 2 * loops


def static_trip_count(init: int, bound: int, step: int) -> int:
    """Iterations of `for (iv = init; iv <(>) bound; iv += step)`."""
    if step > 0:
        return max(0, -(-(bound - init) // step))
    return max(0, -(-(init - bound) // (-step)))


def _iter_blocks(items: tuple[Item, ...]) -> Iterator[Block]:
    for item in items:
        if isinstance(item, Block):
            yield item
        else:
            yield from _iter_blocks(item.body)


def _iter_loops(items: tuple[Item, ...]) -> Iterator[CountedLoop]:
    for item in items:
        if isinstance(item, CountedLoop):
            yield item
            yield from _iter_loops(item.body)


# ---------------------------------------------------------------------------
# verification


def verify_module(module: Module) -> None:
    """Raise IRError on the first structural problem found."""
    seen = set()
    for fn in module.functions:
        if fn.name in seen:
            raise IRError(f"duplicate function '{fn.name}'")
        seen.add(fn.name)
    if not module.has_function(module.entry):
        raise IRError(f"entry function '{module.entry}' not defined")
    for fn in module.functions:
        _verify_function(fn, module)


def _verify_function(fn: Function, module: Module) -> None:
    labels = [b.label for b in fn.iter_blocks()]
    if len(labels) != len(set(labels)):
        dup = next(l for l in labels if labels.count(l) > 1)
        raise IRError(f"{fn.name}: duplicate label '{dup}'")
    loop_ids = [l.id for l in fn.iter_loops()]
    if len(loop_ids) != len(set(loop_ids)):
        dup = next(l for l in loop_ids if loop_ids.count(l) > 1)
        raise IRError(f"{fn.name}: duplicate loop id '{dup}'")

    if fn.body and not isinstance(fn.body[0], Block):
        raise IRError(f"{fn.name}: function body must start with a block")

    defined = set(fn.params)
    for loop in fn.iter_loops():
        defined.add(loop.id)
        if loop.step == 0:
            raise IRError(f"{fn.name}: loop '{loop.id}' has step 0")
        if loop.pragma_unroll is not None and loop.pragma_unroll < 1:
            raise IRError(f"{fn.name}: loop '{loop.id}' pragma count must be >= 1")
        if loop.pragma_unroll is not None and loop.no_unroll:
            raise IRError(f"{fn.name}: loop '{loop.id}' has both unroll pragma "
                          f"and nounroll mark")
        if not loop.body or not isinstance(loop.body[0], Block):
            raise IRError(f"{fn.name}: loop '{loop.id}' body must start with a block")
    for instr in fn.iter_instrs():
        if instr.dst is not None:
            defined.add(instr.dst)

    _verify_region(fn.body, fn, module, defined, active_ivs=frozenset(),
                   outer_labels=frozenset())


def _verify_region(items: tuple[Item, ...], fn: Function, module: Module,
                   defined: set, active_ivs: frozenset,
                   outer_labels: frozenset) -> None:
    # branches may target this region's labels or an enclosing region's
    # (the latter acts as a break out of the intervening loops)
    region_labels = {item.label for item in items if isinstance(item, Block)}
    visible = frozenset(region_labels) | outer_labels
    for item in items:
        if isinstance(item, CountedLoop):
            for bound_op in (item.init, item.bound):
                if not isinstance(bound_op, int) and bound_op not in defined:
                    raise IRError(f"{fn.name}: loop '{item.id}' range uses undefined "
                                  f"register '{bound_op}'")
            _verify_region(item.body, fn, module, defined,
                           active_ivs=active_ivs | {item.id},
                           outer_labels=visible)
            continue
        for instr in item.instrs:
            _verify_instr(instr, item, fn, module, defined, visible)
            if instr.dst is not None and instr.dst in active_ivs:
                # loops own their induction variable
                raise IRError(f"{fn.name}: block '{item.label}' assigns induction "
                              f"variable '{instr.dst}'")


def _verify_instr(instr: Instr, block: Block, fn: Function, module: Module,
                  defined: set, region_labels: set) -> None:
    where = f"{fn.name}/{block.label}"
    if instr.op not in OPCODES:
        raise IRError(f"{where}: unknown opcode '{instr.op}'")
    if instr.op == "call":
        callee = instr.args[0]
        if not module.has_function(callee):
            raise IRError(f"{where}: call to undefined function '{callee}'")
        want = len(module.function(callee).params)
        got = len(instr.args) - 1
        if want != got:
            raise IRError(f"{where}: call to '{callee}' passes {got} args, "
                          f"expected {want}")
        operands = instr.args[1:]
    elif instr.op == "load":
        operands = (instr.args[1],)
    elif instr.op == "store":
        operands = (instr.args[1], instr.args[2])
    elif instr.op == "br":
        operands = ()
        if instr.args[0] not in region_labels:
            raise IRError(f"{where}: branch to unknown label '{instr.args[0]}'")
    elif instr.op == "cbr":
        operands = (instr.args[0],)
        for target in instr.args[1:]:
            if target not in region_labels:
                raise IRError(f"{where}: branch to unknown label '{target}'")
    else:
        operands = instr.args
    for op in operands:
        if isinstance(op, str) and op not in defined:
            raise IRError(f"{where}: use of undefined register '{op}'")
