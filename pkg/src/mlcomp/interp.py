"""Deterministic interpreter producing an execution profile.

All values are integers. Arrays are module-global, spring into existence on
first use, and read as 0 until written. Counted loops execute natively: the
iv init costs one dynamic instruction, and each completed iteration costs one
dynamic instruction (iv update + test) plus one taken branch. `call` costs
1 + nargs instructions plus a branch; `ret` costs 1 instruction plus a branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import Block, CountedLoop, Function, Instr, Module

DEFAULT_STEP_LIMIT = 10**8
CALL_DEPTH_LIMIT = 1000


class InterpError(Exception):
    pass


class StepLimitExceeded(InterpError):
    pass


@dataclass
class ExecutionProfile:
    dynamic_instructions: int = 0
    branches_taken: int = 0
    loads: int = 0
    stores: int = 0
    per_loop_iterations: dict = field(default_factory=dict)
    result: int = 0

    def key(self) -> tuple:
        """Canonical tuple for equality checks in tests."""
        return (self.dynamic_instructions, self.branches_taken, self.loads,
                self.stores, tuple(sorted(self.per_loop_iterations.items())),
                self.result)


class _State:
    def __init__(self, module: Module, step_limit: int):
        self.module = module
        self.step_limit = step_limit
        self.profile = ExecutionProfile()
        self.memory: dict[str, dict[int, int]] = {}
        self.depth = 0

    def tick(self, n: int = 1) -> None:
        self.profile.dynamic_instructions += n
        if self.profile.dynamic_instructions > self.step_limit:
            raise StepLimitExceeded(
                f"step limit of {self.step_limit} instructions exceeded")


def interpret(module: Module, inputs: list[int] | None = None,
              step_limit: int = DEFAULT_STEP_LIMIT) -> ExecutionProfile:
    """Run the module's entry function on `inputs` and return its profile."""
    inputs = inputs or []
    entry = module.function(module.entry)
    if len(inputs) != len(entry.params):
        raise InterpError(f"entry '{entry.name}' takes {len(entry.params)} "
                          f"inputs, got {len(inputs)}")
    state = _State(module, step_limit)
    state.profile.result = _call_function(state, entry, [int(v) for v in inputs])
    return state.profile


def _call_function(state: _State, fn: Function, args: list[int]) -> int:
    state.depth += 1
    if state.depth > CALL_DEPTH_LIMIT:
        raise InterpError(f"call depth limit {CALL_DEPTH_LIMIT} exceeded")
    regs = dict(zip(fn.params, args))
    outcome, value = _exec_region(state, fn, fn.body, regs)
    state.depth -= 1
    if outcome == "ret":
        return value
    if outcome == "jump":
        raise InterpError(f"{fn.name}: branch to unknown label '{value}'")
    # fell off the end of the function: implicit ret 0
    state.tick()
    state.profile.branches_taken += 1
    return 0


def _exec_region(state: _State, fn: Function, items: tuple, regs: dict):
    """Execute a region.

    Returns ("ret", value), ("fall", 0) when execution runs off the region
    end, or ("jump", label) for a branch targeting an enclosing region.
    """
    labels = {item.label: i for i, item in enumerate(items) if isinstance(item, Block)}
    idx = 0
    while idx < len(items):
        item = items[idx]
        if isinstance(item, CountedLoop):
            outcome, value = _exec_loop(state, fn, item, regs)
            if outcome == "jump" and value in labels:
                idx = labels[value]
                continue
            if outcome != "fall":
                return outcome, value
            idx += 1
            continue
        jump = None
        for instr in item.instrs:
            outcome = _exec_instr(state, fn, instr, regs)
            if outcome is None:
                continue
            kind, payload = outcome
            if kind == "ret":
                return "ret", payload
            jump = payload
            break
        if jump is None:
            idx += 1
        elif jump in labels:
            idx = labels[jump]
        else:
            return "jump", jump  # break out to an enclosing region
    return "fall", 0


def _exec_loop(state: _State, fn: Function, loop: CountedLoop, regs: dict):
    state.tick()  # iv init
    iv = _value(loop.init, regs)
    bound = _value(loop.bound, regs)
    regs[loop.id] = iv
    iterations = 0
    key = f"{fn.name}:{loop.id}"

    def account(n):
        state.profile.per_loop_iterations[key] = (
            state.profile.per_loop_iterations.get(key, 0) + n)

    while (iv < bound) if loop.step > 0 else (iv > bound):
        outcome, value = _exec_region(state, fn, loop.body, regs)
        if outcome != "fall":
            account(iterations + 1)
            return outcome, value
        iterations += 1
        iv += loop.step
        regs[loop.id] = iv
        state.tick()  # iv update + test
        state.profile.branches_taken += 1
    account(iterations)
    return "fall", 0


def _exec_instr(state: _State, fn: Function, instr: Instr, regs: dict):
    op, a = instr.op, instr.args
    if op == "add":
        state.tick()
        regs[instr.dst] = _value(a[0], regs) + _value(a[1], regs)
    elif op == "sub":
        state.tick()
        regs[instr.dst] = _value(a[0], regs) - _value(a[1], regs)
    elif op == "mul":
        state.tick()
        regs[instr.dst] = _value(a[0], regs) * _value(a[1], regs)
    elif op == "mov":
        state.tick()
        regs[instr.dst] = _value(a[0], regs)
    elif op == "load":
        state.tick()
        state.profile.loads += 1
        regs[instr.dst] = state.memory.get(a[0], {}).get(_value(a[1], regs), 0)
    elif op == "store":
        state.tick()
        state.profile.stores += 1
        state.memory.setdefault(a[0], {})[_value(a[1], regs)] = _value(a[2], regs)
    elif op == "call":
        nargs = len(a) - 1
        state.tick(1 + nargs)
        state.profile.branches_taken += 1
        callee = state.module.function(a[0])
        result = _call_function(state, callee, [_value(x, regs) for x in a[1:]])
        if instr.dst is not None:
            regs[instr.dst] = result
    elif op == "br":
        state.tick()
        state.profile.branches_taken += 1
        return "jump", a[0]
    elif op == "cbr":
        state.tick()
        state.profile.branches_taken += 1
        return "jump", a[1] if _value(a[0], regs) != 0 else a[2]
    elif op == "ret":
        state.tick()
        state.profile.branches_taken += 1
        return "ret", _value(a[0], regs)
    else:
        raise InterpError(f"unknown opcode '{op}'")
    return None


def _value(operand, regs: dict) -> int:
    if isinstance(operand, int):
        return operand
    try:
        return regs[operand]
    except KeyError:
        raise InterpError(f"read of unset register '{operand}'") from None
