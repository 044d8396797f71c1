"""Comparison and overhead reporting.

The overhead breakdown has exactly five rows (per module and per advised
region): feature collection, setting features, total inference time, factor
assignment, and the total. The comparison report prints per-program cost,
size, speedup (baseline cost over configuration cost) and size bloat, with a
geometric-mean summary row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

from .pipeline import PipelineTrace

OVERHEAD_ROWS = (
    "Feature Collection",
    "Setting Features for ML Model",
    "Total ML Inference Time",
    "Unrolling Factor Assignment",
    "Total Time (s)",
)


def overhead_breakdown(trace: PipelineTrace) -> dict:
    """Five-row overhead table from a pipeline trace."""
    advised = max(1, len(trace.advised()))
    t = trace.timings
    rows = {
        OVERHEAD_ROWS[0]: t["feature_collection"],
        OVERHEAD_ROWS[1]: t["feature_set"],
        OVERHEAD_ROWS[2]: t["inference"],
        OVERHEAD_ROWS[3]: t["assignment"],
    }
    rows[OVERHEAD_ROWS[4]] = sum(rows.values())
    return {
        "rows": [{"task": name, "each_module": rows[name],
                  "each_loop": rows[name] / advised} for name in OVERHEAD_ROWS],
        "advised_decisions": len(trace.advised()),
    }


def render_overhead(breakdown: dict) -> str:
    out = [f"{'Task':<32} {'Each Module':>14} {'Each Loop':>14}"]
    for row in breakdown["rows"]:
        out.append(f"{row['task']:<32} {row['each_module']:>14.6f} "
                   f"{row['each_loop']:>14.6f}")
    return "\n".join(out) + "\n"


@dataclass
class BuildSummary:
    name: str
    cost: Fraction
    size: int
    result: int

    @classmethod
    def from_measure_file(cls, name: str, path: str) -> "BuildSummary":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(name=name, cost=Fraction(data["cost"]), size=data["size"],
                   result=data["result"])


def comparison_report(pairs: list[tuple[str, BuildSummary, BuildSummary]]) -> str:
    """pairs: (program, baseline summary, optimized summary)."""
    out = [f"{'Benchmark':<14} {'Cost Base':>10} {'Cost ACPO':>10} "
           f"{'Size Base':>10} {'Size ACPO':>10} {'Speedup':>9} {'Bloat':>8}"]
    speedups = []
    bloats = []
    for program, base, acpo in pairs:
        sp = Fraction(base.cost, acpo.cost)
        bloat = Fraction(acpo.size, base.size)
        speedups.append(float(sp))
        bloats.append(float(bloat))
        flag = "" if base.result == acpo.result else "  RESULT MISMATCH"
        out.append(f"{program:<14} {float(base.cost):>10.1f} "
                   f"{float(acpo.cost):>10.1f} {base.size:>10} {acpo.size:>10} "
                   f"{float(sp):>9.4f} {float(bloat):>8.4f}{flag}")
    if speedups:
        geo_sp = math.prod(speedups) ** (1 / len(speedups))
        geo_bl = math.prod(bloats) ** (1 / len(bloats))
        out.append(f"{'Geomean':<14} {'':>10} {'':>10} {'':>10} {'':>10} "
                   f"{geo_sp:>9.4f} {geo_bl:>8.4f}")
    return "\n".join(out) + "\n"
