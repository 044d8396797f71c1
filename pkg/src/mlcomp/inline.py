"""Function inlining: legality and the transform.

Inlining splices a renamed copy of the callee body into the caller at the
callsite. Parameters become copies, each `ret v` becomes a result copy plus a
branch to the continuation block (dropped when the ret already sits at the
callee's fall-off end), and every callee label, register, and loop id gets a
callsite-unique prefix. The callee function itself stays in the module.
"""

from __future__ import annotations

from dataclasses import replace

from .analysis import CallSiteRef, call_sites, in_call_cycle
from .ir import Block, CountedLoop, Function, Instr, Module
from .unroll import LegalityReport


class InlineError(Exception):
    pass


def default_inline_heuristic(module: Module, cs: CallSiteRef,
                             size_max: int = 12) -> bool:
    """The replaced baseline: inline small callees."""
    return module.function(cs.callee).instr_count() <= size_max


def inline_legality(cs: CallSiteRef, module: Module) -> LegalityReport:
    reasons = []
    if cs.callee == cs.caller or in_call_cycle(module, cs.callee, cs.caller):
        reasons.append("recursive")
    if cs.callee == module.entry:
        reasons.append("entry")
    return LegalityReport(not reasons, tuple(reasons))


def apply_inline(module: Module, cs: CallSiteRef) -> Module:
    report = inline_legality(cs, module)
    if not report.legal:
        raise InlineError(f"callsite {cs.id} is not inlinable: "
                          f"{', '.join(report.reasons)}")
    caller = module.function(cs.caller)
    callee = module.function(cs.callee)
    prefix = f"{cs.callee}.{cs.index}"
    body, found = _rewrite_region(caller.body, cs, callee, prefix, [0])
    if not found:
        raise InlineError(f"no call #{cs.index} in '{cs.caller}'")
    return module.replace_function(replace(caller, body=tuple(body)))


def _rewrite_region(items, cs: CallSiteRef, callee: Function, prefix: str,
                    counter: list):
    """Find the cs.index-th call instruction and splice the callee there."""
    out = []
    found = False
    for item in items:
        if found:
            out.append(item)
            continue
        if isinstance(item, CountedLoop):
            body, found = _rewrite_region(item.body, cs, callee, prefix, counter)
            out.append(replace(item, body=tuple(body)) if found else item)
            continue
        hit = None
        for j, instr in enumerate(item.instrs):
            if instr.op == "call":
                if counter[0] == cs.index:
                    hit = j
                    counter[0] += 1
                    break
                counter[0] += 1
        if hit is None:
            out.append(item)
            continue
        found = True
        out.extend(_splice(item, hit, callee, prefix))
    return out, found


def _splice(host: Block, call_idx: int, callee: Function, prefix: str) -> list:
    call = host.instrs[call_idx]
    if call.args[0] != callee.name:
        raise InlineError(f"callsite resolves to '{call.args[0]}', "
                          f"expected '{callee.name}'")
    dst = call.dst
    cont_label = f"{prefix}.cont"

    label_map, reg_map = {}, {}
    _collect_renames(callee.body, prefix, label_map, reg_map)
    for param in callee.params:
        reg_map[param] = f"{prefix}.{param}"

    param_movs = tuple(Instr("mov", reg_map[p], (arg,))
                       for p, arg in zip(callee.params, call.args[1:]))
    pre = Block(label=host.label, instrs=host.instrs[:call_idx] + param_movs)

    inlined = _rewrite_rets([_copy_item(item, label_map, reg_map)
                             for item in callee.body], dst, cont_label)
    if _region_falls_off(callee.body):
        # callee can run off its end (implicit ret 0)
        instrs = (Instr("mov", dst, (0,)),) if dst else ()
        inlined.append(Block(label=f"{prefix}.fallret", instrs=instrs))

    cont = Block(label=cont_label, instrs=host.instrs[call_idx + 1:])
    return [pre, *inlined, cont]


def _rewrite_rets(items: list, dst, cont_label: str) -> list:
    """Replace each ret with a result copy and a branch to the continuation.

    A ret at the very end of the spliced body falls through to the
    continuation naturally and needs no branch.
    """

    def rewrite(region, at_end: bool):
        out = []
        for i, item in enumerate(region):
            last_item = i == len(region) - 1
            if isinstance(item, CountedLoop):
                out.append(replace(item, body=tuple(rewrite(item.body, False))))
                continue
            instrs = []
            for j, instr in enumerate(item.instrs):
                if instr.op != "ret":
                    instrs.append(instr)
                    continue
                if dst is not None:
                    instrs.append(Instr("mov", dst, (instr.args[0],)))
                tail = at_end and last_item and j == len(item.instrs) - 1
                if not tail:
                    instrs.append(Instr("br", None, (cont_label,)))
                break  # anything after a ret is dead
            out.append(Block(label=item.label, instrs=tuple(instrs)))
        return out

    return rewrite(items, at_end=True)


def _region_falls_off(region) -> bool:
    """Whether execution can run off the end of this region."""
    if not region:
        return True
    last = region[-1]
    if isinstance(last, CountedLoop):
        return True
    return last.terminator() is None


def _collect_renames(items, prefix: str, label_map: dict, reg_map: dict) -> None:
    for item in items:
        if isinstance(item, Block):
            label_map[item.label] = f"{prefix}.{item.label}"
            for instr in item.instrs:
                if instr.dst is not None:
                    reg_map[instr.dst] = f"{prefix}.{instr.dst}"
        else:
            reg_map[item.id] = f"{prefix}.{item.id}"
            _collect_renames(item.body, prefix, label_map, reg_map)


def _copy_item(item, label_map: dict, reg_map: dict):
    if isinstance(item, Block):
        return Block(label=label_map[item.label],
                     instrs=tuple(_copy_instr(i, label_map, reg_map)
                                  for i in item.instrs))
    # inlined loop copies are fresh regions the tuner never saw: mark them
    return CountedLoop(id=reg_map[item.id],
                       init=_sub(item.init, reg_map),
                       bound=_sub(item.bound, reg_map),
                       step=item.step,
                       body=tuple(_copy_item(x, label_map, reg_map)
                                  for x in item.body),
                       pragma_unroll=None,
                       no_unroll=True)


def _copy_instr(instr: Instr, label_map: dict, reg_map: dict) -> Instr:
    dst = reg_map.get(instr.dst, instr.dst) if instr.dst else None
    op, a = instr.op, instr.args
    if op in ("add", "sub", "mul", "mov", "ret"):
        args = tuple(_sub(x, reg_map) for x in a)
    elif op == "load":
        args = (a[0], _sub(a[1], reg_map))
    elif op == "store":
        args = (a[0], _sub(a[1], reg_map), _sub(a[2], reg_map))
    elif op == "call":
        args = (a[0], *(_sub(x, reg_map) for x in a[1:]))
    elif op == "br":
        args = (label_map.get(a[0], a[0]),)
    elif op == "cbr":
        args = (_sub(a[0], reg_map), label_map.get(a[1], a[1]),
                label_map.get(a[2], a[2]))
    else:
        args = a
    return Instr(op, dst, args)


def _sub(operand, reg_map: dict):
    if isinstance(operand, str):
        return reg_map.get(operand, operand)
    return operand
