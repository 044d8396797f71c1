"""Textual IR format: parser and printer.

Grammar (line oriented, `#` starts a comment):

    module <name>                          # optional, first non-blank line
    func <name>(<p1>, <p2>, ...) {
        <label>:                           # labeled basic block
        <r> = add <a>, <b>                 # also sub, mul
        <r> = <a>                          # copy
        <r> = load <arr>[<i>]
        store <arr>[<i>], <v>
        <r> = call <fn>(<a>, ...)          # result optional
        br <label>
        br <cond>, <then>, <else>
        ret <v>
        #pragma unroll <N>                 # immediately before a loop
        #pragma nounroll
        loop <id> (iv = <init> to <bound> step <step>) {
            ...                            # blocks, instructions, nested loops
        }
    }

Operands are decimal integers or identifiers. A function or loop body that
starts with bare instructions gets an implicit entry block. parse_module and
print_module round trip: parse(print(m)) == m for every verified module.
"""

from __future__ import annotations

import re

from .ir import Block, CountedLoop, Function, Instr, Item, Module, Operand

IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*$")


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int = 1):
        super().__init__(f"line {line}:{col}: {message}")
        self.line = line
        self.col = col


class _Lines:
    """Token-ish cursor over the cleaned input lines."""

    def __init__(self, text: str):
        self.rows = []
        for idx, raw in enumerate(text.splitlines(), start=1):
            stripped = raw.strip()
            if stripped.startswith("#pragma"):
                self.rows.append((idx, stripped))
                continue
            if "#" in stripped:
                stripped = stripped[: stripped.index("#")].strip()
            if stripped:
                self.rows.append((idx, stripped))
        self.pos = 0

    def peek(self):
        return self.rows[self.pos] if self.pos < len(self.rows) else (self._eof_line(), None)

    def next(self):
        row = self.peek()
        self.pos += 1
        return row

    def done(self) -> bool:
        return self.pos >= len(self.rows)

    def _eof_line(self) -> int:
        return self.rows[-1][0] + 1 if self.rows else 1


def parse_module(text: str, name: str = "module") -> Module:
    """Parse IR text into a Module (structural checks are verify_module's job)."""
    lines = _Lines(text)
    mod_name = name
    if not lines.done():
        ln, row = lines.peek()
        if row.startswith("module "):
            mod_name = _ident(row[len("module "):].strip(), ln)
            lines.next()
    functions = []
    while not lines.done():
        functions.append(_parse_function(lines))
    return Module(name=mod_name, functions=tuple(functions))


def _parse_function(lines: _Lines) -> Function:
    ln, row = lines.next()
    m = re.match(r"func\s+([A-Za-z_][A-Za-z0-9_.]*)\s*\(([^)]*)\)\s*\{$", row or "")
    if not m:
        raise ParseError("expected 'func <name>(<params>) {'", ln)
    name = m.group(1)
    params = tuple(p.strip() for p in m.group(2).split(",") if p.strip())
    for p in params:
        _ident(p, ln)
    body = _parse_region(lines, entry_label="entry")
    return Function(name=name, params=params, body=tuple(body))


def _parse_region(lines: _Lines, entry_label: str) -> list[Item]:
    """Parse items until the closing '}' (consumed)."""
    items: list[Item] = []
    cur_label = None
    cur_instrs: list[Instr] = []
    pending_pragma = None      # (line, count or 0 for nounroll)
    auto_count = 0

    def flush_block():
        nonlocal cur_label, cur_instrs
        if cur_label is not None:
            items.append(Block(label=cur_label, instrs=tuple(cur_instrs)))
            cur_label, cur_instrs = None, []

    def open_block(label: str):
        nonlocal cur_label
        flush_block()
        cur_label = label

    def auto_label() -> str:
        nonlocal auto_count
        auto_count += 1
        return entry_label if auto_count == 1 else f"{entry_label}.{auto_count}"

    while True:
        if lines.done():
            raise ParseError("unexpected end of input, missing '}'", lines.peek()[0])
        ln, row = lines.next()
        if row == "}":
            if pending_pragma is not None:
                raise ParseError("pragma not followed by a loop", pending_pragma[0])
            flush_block()
            if not items or not isinstance(items[0], Block):
                # regions must open with a block; synthesize an empty one
                used = {it.label for it in items if isinstance(it, Block)}
                label = entry_label if entry_label not in used \
                    else f"{entry_label}.0"
                items.insert(0, Block(label=label))
            return items
        if row.startswith("#pragma"):
            if pending_pragma is not None:
                raise ParseError("pragma not followed by a loop", pending_pragma[0])
            pending_pragma = (ln, _parse_pragma(row, ln))
            continue
        loop_match = re.match(
            r"loop\s+([A-Za-z_][A-Za-z0-9_.]*)\s*\(\s*iv\s*=\s*(\S+)\s+to\s+(\S+)"
            r"\s+step\s+(-?\d+)\s*\)\s*\{$", row)
        if loop_match:
            flush_block()
            loop_id = loop_match.group(1)
            init = _operand(loop_match.group(2), ln)
            bound = _operand(loop_match.group(3), ln)
            step = int(loop_match.group(4))
            body = _parse_region(lines, entry_label=f"{loop_id}.body")
            pragma, nounroll = None, False
            if pending_pragma is not None:
                pragma = pending_pragma[1] or None
                nounroll = pending_pragma[1] == 0
                pending_pragma = None
            items.append(CountedLoop(id=loop_id, init=init, bound=bound, step=step,
                                     body=tuple(body), pragma_unroll=pragma,
                                     no_unroll=nounroll))
            continue
        if pending_pragma is not None:
            raise ParseError("pragma not followed by a loop", pending_pragma[0])
        label_match = re.match(r"([A-Za-z_][A-Za-z0-9_.]*):$", row)
        if label_match:
            open_block(label_match.group(1))
            continue
        if cur_label is None:
            open_block(auto_label())
        cur_instrs.append(_parse_instr(row, ln))


def _parse_pragma(row: str, ln: int) -> int:
    m = re.match(r"#pragma\s+unroll\s+(\d+)$", row)
    if m:
        count = int(m.group(1))
        if count < 1:
            raise ParseError("pragma unroll count must be >= 1", ln)
        return count
    if re.match(r"#pragma\s+nounroll$", row):
        return 0
    raise ParseError(f"unknown pragma '{row}'", ln)


def _parse_instr(row: str, ln: int) -> Instr:
    if row.startswith("store "):
        m = re.match(r"store\s+([A-Za-z_][A-Za-z0-9_.]*)\s*\[([^\]]+)\]\s*,\s*(\S+)$", row)
        if not m:
            raise ParseError("malformed store", ln)
        return Instr("store", None, (m.group(1), _operand(m.group(2).strip(), ln),
                                     _operand(m.group(3), ln)))
    if row.startswith("br "):
        parts = [p.strip() for p in row[3:].split(",")]
        if len(parts) == 1:
            return Instr("br", None, (_ident(parts[0], ln),))
        if len(parts) == 3:
            return Instr("cbr", None, (_operand(parts[0], ln), _ident(parts[1], ln),
                                       _ident(parts[2], ln)))
        raise ParseError("br takes 1 label or cond, then, else", ln)
    if row.startswith("ret ") or row == "ret":
        value = row[4:].strip() or "0"
        return Instr("ret", None, (_operand(value, ln),))
    if row.startswith("call "):
        callee, args = _parse_call(row[5:].strip(), ln)
        return Instr("call", None, (callee, *args))

    m = re.match(r"([A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(.+)$", row)
    if not m:
        raise ParseError(f"cannot parse instruction '{row}'", ln)
    dst, rhs = m.group(1), m.group(2).strip()

    arith = re.match(r"(add|sub|mul)\s+(\S+)\s*,\s*(\S+)$", rhs)
    if arith:
        return Instr(arith.group(1), dst, (_operand(arith.group(2), ln),
                                           _operand(arith.group(3), ln)))
    load = re.match(r"load\s+([A-Za-z_][A-Za-z0-9_.]*)\s*\[([^\]]+)\]$", rhs)
    if load:
        return Instr("load", dst, (load.group(1), _operand(load.group(2).strip(), ln)))
    if rhs.startswith("call "):
        callee, args = _parse_call(rhs[5:].strip(), ln)
        return Instr("call", dst, (callee, *args))
    if re.match(r"\S+$", rhs):
        return Instr("mov", dst, (_operand(rhs, ln),))
    raise ParseError(f"cannot parse instruction '{row}'", ln)


def _parse_call(rest: str, ln: int) -> tuple[str, tuple[Operand, ...]]:
    m = re.match(r"([A-Za-z_][A-Za-z0-9_.]*)\s*\(([^)]*)\)$", rest)
    if not m:
        raise ParseError("malformed call", ln)
    args = tuple(_operand(a.strip(), ln) for a in m.group(2).split(",") if a.strip())
    return m.group(1), args


def _operand(token: str, ln: int) -> Operand:
    if re.match(r"-?\d+$", token):
        return int(token)
    return _ident(token, ln)


def _ident(token: str, ln: int) -> str:
    if not IDENT.match(token):
        raise ParseError(f"invalid identifier '{token}'", ln)
    return token


# ---------------------------------------------------------------------------
# printer


def print_module(module: Module) -> str:
    out = [f"module {module.name}"]
    for fn in module.functions:
        out.append("")
        out.append(f"func {fn.name}({', '.join(fn.params)}) {{")
        _print_region(fn.body, out, indent=1)
        out.append("}")
    return "\n".join(out) + "\n"


def _print_region(items, out: list, indent: int) -> None:
    pad = "  " * indent
    for item in items:
        if isinstance(item, Block):
            out.append(f"{pad}{item.label}:")
            for instr in item.instrs:
                out.append(f"{pad}  {_format_instr(instr)}")
        else:
            if item.pragma_unroll is not None:
                out.append(f"{pad}#pragma unroll {item.pragma_unroll}")
            if item.no_unroll:
                out.append(f"{pad}#pragma nounroll")
            out.append(f"{pad}loop {item.id} (iv = {item.init} to {item.bound} "
                       f"step {item.step}) {{")
            _print_region(item.body, out, indent + 1)
            out.append(f"{pad}}}")


def _format_instr(instr: Instr) -> str:
    a = instr.args
    if instr.op in ("add", "sub", "mul"):
        return f"{instr.dst} = {instr.op} {a[0]}, {a[1]}"
    if instr.op == "mov":
        return f"{instr.dst} = {a[0]}"
    if instr.op == "load":
        return f"{instr.dst} = load {a[0]}[{a[1]}]"
    if instr.op == "store":
        return f"store {a[0]}[{a[1]}], {a[2]}"
    if instr.op == "call":
        call = f"call {a[0]}({', '.join(str(x) for x in a[1:])})"
        return f"{instr.dst} = {call}" if instr.dst else call
    if instr.op == "br":
        return f"br {a[0]}"
    if instr.op == "cbr":
        return f"br {a[0]}, {a[1]}, {a[2]}"
    if instr.op == "ret":
        return f"ret {a[0]}"
    raise ValueError(f"unknown opcode {instr.op}")
