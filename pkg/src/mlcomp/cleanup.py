"""Cleanup pass: block-local constant folding, dead-block removal, and
removal of branches to the immediately following block.

Runs between the two unroll pass instances so the second one sees simplified
IR. Folding is per-block only (no cross-block dataflow), which keeps it
trivially sound in the presence of branches.
"""

from __future__ import annotations

from dataclasses import replace

from .ir import Block, CountedLoop, Function, Instr, Module


def cleanup_module(module: Module) -> Module:
    return replace(module,
                   functions=tuple(cleanup_function(fn) for fn in module.functions))


def cleanup_function(fn: Function) -> Function:
    items = _fold_region(fn.body)
    items = _remove_dead(items)
    items = _fold_fallthrough_branches(items)
    items = _remove_dead(items)
    return replace(fn, body=tuple(items))


def _fold_region(items) -> list:
    out = []
    for item in items:
        if isinstance(item, CountedLoop):
            out.append(replace(item, body=tuple(_fold_region(item.body))))
        else:
            out.append(_fold_block(item))
    return out


def _fold_block(block: Block) -> Block:
    env: dict[str, int] = {}
    instrs = []
    for instr in block.instrs:
        instr = _sub_known(instr, env)
        op, a = instr.op, instr.args
        if op in ("add", "sub", "mul") and isinstance(a[0], int) and isinstance(a[1], int):
            value = a[0] + a[1] if op == "add" else \
                a[0] - a[1] if op == "sub" else a[0] * a[1]
            instr = Instr("mov", instr.dst, (value,))
        if instr.op == "cbr" and isinstance(instr.args[0], int):
            target = instr.args[1] if instr.args[0] != 0 else instr.args[2]
            instr = Instr("br", None, (target,))
        if instr.dst is not None:
            if instr.op == "mov" and isinstance(instr.args[0], int):
                env[instr.dst] = instr.args[0]
            else:
                env.pop(instr.dst, None)
        instrs.append(instr)
    return Block(label=block.label, instrs=tuple(instrs))


def _sub_known(instr: Instr, env: dict) -> Instr:
    def sub(x):
        return env.get(x, x) if isinstance(x, str) else x

    op, a = instr.op, instr.args
    if op in ("add", "sub", "mul", "mov", "ret"):
        args = tuple(sub(x) for x in a)
    elif op == "load":
        args = (a[0], sub(a[1]))
    elif op == "store":
        args = (a[0], sub(a[1]), sub(a[2]))
    elif op == "call":
        args = (a[0], *(sub(x) for x in a[1:]))
    elif op == "cbr":
        args = (sub(a[0]), a[1], a[2])
    else:
        return instr
    return Instr(op, instr.dst, args)


def _remove_dead(items) -> list:
    """Drop region items unreachable from the region entry."""
    items = [replace(item, body=tuple(_remove_dead(item.body)))
             if isinstance(item, CountedLoop) else item
             for item in items]
    n = len(items)
    if n == 0:
        return []
    index_of = {item.label: i for i, item in enumerate(items)
                if isinstance(item, Block)}
    succs: dict[int, set[int]] = {}
    for i, item in enumerate(items):
        edges = set()
        if isinstance(item, CountedLoop):
            if i + 1 < n:
                edges.add(i + 1)
            for target in _branch_targets_within(item.body):
                if target in index_of:
                    edges.add(index_of[target])
        else:
            falls = True
            for instr in item.instrs:
                # br/cbr always transfer control; code after them is dead.
                # targets missing from this region escape to an enclosing one.
                if instr.op == "br":
                    if instr.args[0] in index_of:
                        edges.add(index_of[instr.args[0]])
                    falls = False
                    break
                if instr.op == "cbr":
                    for target in instr.args[1:]:
                        if target in index_of:
                            edges.add(index_of[target])
                    falls = False
                    break
                if instr.op == "ret":
                    falls = False
                    break
            if falls and i + 1 < n:
                edges.add(i + 1)
        succs[i] = edges
    reachable = {0}
    frontier = [0]
    while frontier:
        cur = frontier.pop()
        for nxt in succs[cur]:
            if nxt not in reachable:
                reachable.add(nxt)
                frontier.append(nxt)
    kept = []
    for i, item in enumerate(items):
        if i not in reachable:
            continue
        if isinstance(item, Block):
            item = _truncate_after_jump(item)
        kept.append(item)
    return kept


def _truncate_after_jump(block: Block) -> Block:
    for i, instr in enumerate(block.instrs):
        if instr.op in ("br", "cbr", "ret"):
            return Block(label=block.label, instrs=block.instrs[: i + 1])
    return block


def _branch_targets_within(items) -> set:
    """All labels branched to anywhere inside a subtree (for escape edges)."""
    targets = set()
    for item in items:
        if isinstance(item, CountedLoop):
            targets |= _branch_targets_within(item.body)
        else:
            for instr in item.instrs:
                if instr.op == "br":
                    targets.add(instr.args[0])
                elif instr.op == "cbr":
                    targets.update(instr.args[1:])
    return targets


def _fold_fallthrough_branches(items) -> list:
    out = []
    for i, item in enumerate(items):
        if isinstance(item, CountedLoop):
            out.append(replace(item, body=tuple(_fold_fallthrough_branches(item.body))))
            continue
        term = item.terminator()
        nxt = items[i + 1] if i + 1 < len(items) else None
        if term is not None and term.op == "br" and isinstance(nxt, Block) \
                and nxt.label == term.args[0]:
            item = Block(label=item.label, instrs=item.instrs[:-1])
        out.append(item)
    return out
