"""Deterministic cost model standing in for hardware measurement.

cost = w_instr * dynamic_instructions + w_branch * branches_taken
     + w_icache * max(0, size - icache_capacity)

Costs are exact rationals so golden files are bit-stable across platforms.
The defaults make full unrolling of small hot loops profitable and oversized
unrolls unprofitable, so per-loop optima are nontrivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .interp import ExecutionProfile, interpret
from .ir import Module


@dataclass(frozen=True)
class CostModel:
    w_instr: Fraction = Fraction(1)
    w_branch: Fraction = Fraction(8)
    icache_capacity: int = 512
    w_icache: Fraction = Fraction(4)

    def __post_init__(self):
        if self.w_instr <= 0 or self.w_branch <= 0 or self.icache_capacity <= 0 \
                or self.w_icache < 0:
            raise ValueError("cost model weights must be positive "
                             "(w_icache may be zero)")

    @classmethod
    def from_dict(cls, params: dict) -> "CostModel":
        kwargs = {}
        for key in ("w_instr", "w_branch", "w_icache"):
            if key in params:
                kwargs[key] = Fraction(str(params[key]))
        if "icache_capacity" in params:
            kwargs["icache_capacity"] = int(params["icache_capacity"])
        return cls(**kwargs)


@dataclass(frozen=True)
class Measurement:
    cost: Fraction
    size: int
    profile: ExecutionProfile = field(compare=False)


def measure(module: Module, inputs: list[int] | None = None,
            cm: CostModel | None = None,
            step_limit: int | None = None) -> Measurement:
    cm = cm or CostModel()
    kwargs = {} if step_limit is None else {"step_limit": step_limit}
    profile = interpret(module, inputs or [], **kwargs)
    size = module.size()
    cost = (cm.w_instr * profile.dynamic_instructions
            + cm.w_branch * profile.branches_taken
            + cm.w_icache * max(0, size - cm.icache_capacity))
    return Measurement(cost=cost, size=size, profile=profile)


def speedup(base: Measurement, x: Measurement) -> Fraction:
    """Baseline cost over configuration cost, exactly (> 1 means faster)."""
    if base.cost <= 0 or x.cost <= 0:
        raise ValueError("costs must be positive")
    return Fraction(base.cost, x.cost)
