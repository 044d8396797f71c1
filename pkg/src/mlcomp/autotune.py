"""Fine-grained autotuner: per-loop unroll counts and per-callsite inline bits.

The search space is the set of legality-passing regions of the original
module whose decision slot is actually reachable (loops owned by a pragma are
preempted and excluded). Each trial assigns every region one in-domain value,
compiles through the pipeline with those values injected at the decision
point, measures under the deterministic cost model, and records speedup
against the default-heuristic baseline build measured once up front.

Strategies: random, greedy hill-climb with periodic restarts, and exhaustive
enumeration for small spaces (also the exactness oracle).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .analysis import build_loop_forest, call_sites
from .costmodel import CostModel, Measurement, measure, speedup
from .features import FeatureVector
from .inline import inline_legality
from .interp import InterpError
from .ir import Module, verify_module
from .pipeline import PipelineConfig, run_pipeline
from .unroll import UnrollConfig, unroll_legality
from .wire import format_number

UNROLL_CLASSES = (0, 2, 4, 8, 16, 32, 64)
INLINE_DOMAIN = (0, 1)


@dataclass(frozen=True)
class Region:
    id: str
    kind: str                    # "LU" | "FI"
    domain: tuple[int, ...]


@dataclass
class SearchSpace:
    regions: list[Region] = field(default_factory=list)

    def size(self) -> int:
        total = 1
        for region in self.regions:
            total *= len(region.domain)
        return total

    def by_id(self, region_id: str) -> Region:
        for region in self.regions:
            if region.id == region_id:
                return region
        raise KeyError(region_id)


def enumerate_search_space(module: Module, pass_kinds=("LU", "FI"),
                           unroll_config: Optional[UnrollConfig] = None) -> SearchSpace:
    verify_module(module)
    unroll_config = unroll_config or UnrollConfig()
    space = SearchSpace()
    if "LU" in pass_kinds:
        for fn in module.functions:
            forest = build_loop_forest(fn)
            for loop in forest.loops:
                if loop.node.no_unroll or loop.node.pragma_unroll is not None:
                    continue  # decision slot preempted or disabled
                if not unroll_legality(loop, forest, unroll_config).legal:
                    continue
                space.regions.append(Region(id=f"{fn.name}:{loop.id}",
                                            kind="LU", domain=UNROLL_CLASSES))
    if "FI" in pass_kinds:
        for fn in module.functions:
            for site in call_sites(fn):
                if inline_legality(site, module).legal:
                    space.regions.append(Region(id=site.id, kind="FI",
                                                domain=INLINE_DOMAIN))
    return space


# ---------------------------------------------------------------------------
# proposal strategies


def propose(space: SearchSpace, history: list, strategy: str,
            seed: int) -> Optional[dict]:
    """Next configuration, deterministic given (history, seed).

    Returns None when an exhaustive enumeration is finished.
    """
    rng = random.Random(seed * 1000003 + len(history))
    if strategy == "random":
        return {r.id: rng.choice(r.domain) for r in space.regions}
    if strategy == "exhaustive":
        return _decode_config(space, len(history))
    if strategy == "hillclimb":
        return _propose_hillclimb(space, history, rng)
    raise ValueError(f"unknown strategy '{strategy}'")


def _decode_config(space: SearchSpace, index: int) -> Optional[dict]:
    if index >= space.size():
        return None
    config = {}
    for region in reversed(space.regions):
        index, digit = divmod(index, len(region.domain))
        config[region.id] = region.domain[digit]
    return config


def _propose_hillclimb(space: SearchSpace, history: list, rng) -> dict:
    """Sweep the one-region neighbors of the best trial; restart when the
    whole neighborhood is certified no better (a local optimum)."""
    valid = [t for t in history if t.valid]
    if not valid or not space.regions:
        return {r.id: rng.choice(r.domain) for r in space.regions}
    best = min(valid, key=lambda t: (t.measurement.cost, t.iteration))
    seen = {_freeze(t.configuration) for t in history}
    for region in space.regions:
        for value in region.domain:
            if value == best.configuration[region.id]:
                continue
            candidate = dict(best.configuration)
            candidate[region.id] = value
            if _freeze(candidate) not in seen:
                return candidate
    candidate = {r.id: rng.choice(r.domain) for r in space.regions}
    for _ in range(20):  # prefer a restart point we have not measured yet
        if _freeze(candidate) not in seen:
            break
        candidate = {r.id: rng.choice(r.domain) for r in space.regions}
    return candidate


def _freeze(config: dict) -> tuple:
    return tuple(sorted(config.items()))


# ---------------------------------------------------------------------------
# the tuning loop


@dataclass
class TrialRow:
    region_id: str
    kind: str
    choice: int
    features: FeatureVector


@dataclass
class TuningTrial:
    iteration: int
    configuration: dict
    measurement: Optional[Measurement]
    speedup_vs_baseline: Optional[Fraction]
    rows: list = field(default_factory=list)
    valid: bool = True
    error: str = ""


@dataclass
class TuneResult:
    program: str
    seed: int
    strategy: str
    iterations_requested: int
    space: SearchSpace
    baseline: Measurement
    trials: list = field(default_factory=list)

    def valid_trials(self) -> list:
        return [t for t in self.trials if t.valid]

    def best_trial(self) -> Optional[TuningTrial]:
        valid = self.valid_trials()
        if not valid:
            return None
        return min(valid, key=lambda t: (t.measurement.cost, t.iteration))

    def header(self) -> dict:
        return {"program": self.program, "seed": self.seed,
                "strategy": self.strategy,
                "iterations": self.iterations_requested,
                "configurations": len(self.trials),
                "space": self.space.size(),
                "baseline_cost": format_number(float(self.baseline.cost))}


def tune(module: Module, pass_kinds=("LU", "FI"), iterations: int = 100,
         cm: Optional[CostModel] = None, seed: int = 0,
         strategy: str = "hillclimb", inputs: Optional[list[int]] = None,
         program: str = "program",
         unroll_config: Optional[UnrollConfig] = None) -> TuneResult:
    cm = cm or CostModel()
    inputs = inputs or []
    unroll_config = unroll_config or UnrollConfig()
    space = enumerate_search_space(module, pass_kinds, unroll_config)

    base_cfg = PipelineConfig(unroll=unroll_config)
    baseline_module, _ = run_pipeline(module, base_cfg)
    baseline = measure(baseline_module, inputs, cm)

    result = TuneResult(program=program, seed=seed, strategy=strategy,
                        iterations_requested=iterations, space=space,
                        baseline=baseline)
    for it in range(iterations):
        config = propose(space, result.trials, strategy, seed)
        if config is None:
            break  # exhaustive enumeration finished
        trial = _evaluate(module, config, it, baseline, cm, inputs, unroll_config)
        result.trials.append(trial)
    return result


def _evaluate(module: Module, config: dict, iteration: int,
              baseline: Measurement, cm: CostModel, inputs: list,
              unroll_config: UnrollConfig) -> TuningTrial:
    pcfg = PipelineConfig(overrides=dict(config), unroll=unroll_config)
    optimized, trace = run_pipeline(module, pcfg)
    try:
        meas = measure(optimized, inputs, cm)
    except InterpError as exc:
        return TuningTrial(iteration=iteration, configuration=dict(config),
                           measurement=None, speedup_vs_baseline=None,
                           valid=False, error=str(exc))
    rows = []
    seen = set()
    for record in trace.decisions:
        if record.region_id in config and record.region_id not in seen \
                and record.features is not None:
            seen.add(record.region_id)
            rows.append(TrialRow(region_id=record.region_id, kind=record.kind,
                                 choice=config[record.region_id],
                                 features=record.features))
    return TuningTrial(iteration=iteration, configuration=dict(config),
                       measurement=meas,
                       speedup_vs_baseline=speedup(baseline, meas), rows=rows)


def exhaustive_best(module: Module, pass_kinds=("LU", "FI"),
                    cm: Optional[CostModel] = None,
                    inputs: Optional[list[int]] = None,
                    unroll_config: Optional[UnrollConfig] = None):
    """Full enumeration; returns (best configuration, best Measurement)."""
    result = tune(module, pass_kinds, iterations=enumerate_search_space(
        module, pass_kinds, unroll_config or UnrollConfig()).size(),
        cm=cm, seed=0, strategy="exhaustive", inputs=inputs,
        unroll_config=unroll_config)
    best = result.best_trial()
    if best is None:
        raise RuntimeError("no valid trials")
    return best.configuration, best.measurement


# ---------------------------------------------------------------------------
# trial logs (CSV)


def write_trial_logs(result: TuneResult, out_dir: str) -> list[str]:
    """One CSV per model kind: program,iteration,region,choice,features,labels."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for kind, schema_names in (("LU", _schema_names("LU")),
                               ("FI", _schema_names("FI"))):
        rows = []
        for trial in result.valid_trials():
            for row in trial.rows:
                if row.kind != kind:
                    continue
                feature_cells = [format_number(v) for v in row.features.numbers()]
                rows.append(",".join([
                    result.program, str(trial.iteration), row.region_id, kind,
                    str(row.choice), *feature_cells,
                    format_number(float(trial.measurement.cost)),
                    str(trial.measurement.size),
                    format_number(float(trial.speedup_vs_baseline))]))
        if not rows:
            continue
        path = os.path.join(out_dir, f"{result.program}.{kind.lower()}.csv")
        header_meta = " ".join(f"{k}={v}" for k, v in result.header().items())
        columns = ",".join(["program", "iteration", "region_id", "kind",
                            "choice", *schema_names, "cost", "size", "speedup"])
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {header_meta}\n{columns}\n")
            fh.write("\n".join(rows) + "\n")
        paths.append(path)
    return paths


@dataclass
class LogRow:
    program: str
    iteration: int
    region_id: str
    kind: str
    choice: int
    features: FeatureVector
    cost: float
    size: int
    speedup: float


def read_trial_logs(paths) -> list[LogRow]:
    rows = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            lines = [l.rstrip("\n") for l in fh if l.strip()]
        body = [l for l in lines if not l.startswith("#")]
        if not body:
            continue
        columns = body[0].split(",")
        n_features = len(columns) - 8
        kind_col = columns[3]
        if kind_col != "kind":
            raise ValueError(f"{path}: unexpected header")
        names = columns[5:5 + n_features]
        for line in body[1:]:
            cells = line.split(",")
            kind = cells[3]
            expected = _schema_names(kind)
            if list(names) != list(expected):
                raise ValueError(f"{path}: feature columns do not match the "
                                 f"{kind} schema")
            values = tuple((name, _num(cell))
                           for name, cell in zip(names, cells[5:5 + n_features]))
            rows.append(LogRow(
                program=cells[0], iteration=int(cells[1]), region_id=cells[2],
                kind=kind, choice=int(cells[4]),
                features=FeatureVector(kind=kind, values=values),
                cost=float(cells[5 + n_features]),
                size=int(cells[6 + n_features]),
                speedup=float(cells[7 + n_features])))
    return rows


def _schema_names(kind: str) -> tuple[str, ...]:
    from .features import SCHEMAS
    return tuple(name for name, _ in SCHEMAS[kind])


def _num(cell: str):
    value = float(cell)
    return int(value) if value.is_integer() and "." not in cell else value
