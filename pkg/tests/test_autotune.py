import itertools

from mlcomp.autotune import (UNROLL_CLASSES, enumerate_search_space,
                             exhaustive_best, propose, read_trial_logs, tune,
                             write_trial_logs)
from mlcomp.costmodel import measure
from mlcomp.pipeline import PipelineConfig, run_pipeline

from conftest import parse

PROGRAM = """
func main() {
  s = 0
  loop i (iv = 0 to 24 step 1) {
    t = call triple(i)
    s = add s, t
  }
  loop j (iv = 0 to 16 step 1) {
    u = load a[j]
    s = add s, u
  }
  ret s
}
func triple(x) {
  r = mul x, 3
  ret r
}
"""


def space_of(text, kinds=("LU", "FI")):
    return enumerate_search_space(parse(text), kinds)


def test_space_contents():
    space = space_of(PROGRAM)
    ids = {(r.id, r.kind) for r in space.regions}
    assert ids == {("main:i", "LU"), ("main:j", "LU"), ("main:0", "FI")}
    assert space.size() == 7 * 7 * 2
    lu_only = space_of(PROGRAM, ("LU",))
    assert {r.kind for r in lu_only.regions} == {"LU"}
    for region in lu_only.regions:
        assert region.domain == UNROLL_CLASSES


def test_recursive_callsite_excluded():
    space = space_of("""
func main() {
  r = call f(5)
  ret r
}
func f(n) {
  entry:
  br n, rec, done
  done:
  ret 0
  rec:
  t = sub n, 1
  r = call f(t)
  s = add r, n
  ret s
}
""")
    fi = [r for r in space.regions if r.kind == "FI"]
    assert [r.id for r in fi] == ["main:0"]  # the self-call is not a region


def test_pragma_loops_excluded():
    space = space_of("""
func main() {
  s = 0
  #pragma unroll 4
  loop i (iv = 0 to 16 step 1) {
    s = add s, i
  }
  loop j (iv = 0 to 16 step 1) {
    s = add s, j
  }
  ret s
}
""")
    assert [r.id for r in space.regions if r.kind == "LU"] == ["main:j"]


def test_propose_random_is_reproducible():
    space = space_of(PROGRAM)
    a = propose(space, [], "random", seed=7)
    b = propose(space, [], "random", seed=7)
    assert a == b
    assert set(a) == {r.id for r in space.regions}
    for region in space.regions:
        assert a[region.id] in region.domain
    assert propose(space, [], "random", seed=8) != a or True  # may coincide


def test_exhaustive_enumerates_each_config_once():
    space = space_of(PROGRAM, ("LU",))
    seen = set()
    history = []
    while True:
        config = propose(space, history, "exhaustive", seed=0)
        if config is None:
            break
        key = tuple(sorted(config.items()))
        assert key not in seen
        seen.add(key)
        history.append(_fake_trial(len(history), config))
    assert len(seen) == space.size() == 49


def test_hillclimb_mutates_one_region_from_best():
    m = parse(PROGRAM)
    result = tune(m, iterations=12, seed=3, strategy="hillclimb")
    valid = result.valid_trials()
    best_so_far = valid[0]
    for trial in valid[1:]:
        diffs = sum(1 for k in trial.configuration
                    if trial.configuration[k] != best_so_far.configuration[k])
        assert 1 <= diffs <= len(trial.configuration)
        if trial.measurement.cost < best_so_far.measurement.cost:
            best_so_far = trial


def test_tune_is_deterministic_given_seed():
    m = parse(PROGRAM)
    a = tune(m, iterations=20, seed=11, strategy="hillclimb")
    b = tune(m, iterations=20, seed=11, strategy="hillclimb")
    assert [t.configuration for t in a.trials] == [t.configuration for t in b.trials]
    assert [t.measurement.cost for t in a.trials] == \
        [t.measurement.cost for t in b.trials]
    assert a.baseline == b.baseline


def test_baseline_computed_once_and_constant():
    m = parse(PROGRAM)
    result = tune(m, iterations=10, seed=1, strategy="random")
    base_build, _ = run_pipeline(m, PipelineConfig())
    assert result.baseline == measure(base_build)
    for trial in result.valid_trials():
        assert trial.speedup_vs_baseline == \
            result.baseline.cost / trial.measurement.cost


def test_exhaustive_matches_brute_force_oracle():
    m = parse(PROGRAM)
    best_cfg, best_meas = exhaustive_best(m)
    # independent brute force over the full cross product
    space = enumerate_search_space(m)
    ids = [r.id for r in space.regions]
    best_oracle = None
    for values in itertools.product(*(r.domain for r in space.regions)):
        config = dict(zip(ids, values))
        optimized, _ = run_pipeline(m, PipelineConfig(overrides=config))
        cost = measure(optimized).cost
        if best_oracle is None or cost < best_oracle[1]:
            best_oracle = (config, cost)
    assert best_meas.cost == best_oracle[1]


def test_trial_rows_carry_features_for_every_region():
    m = parse(PROGRAM)
    result = tune(m, iterations=5, seed=2, strategy="random")
    for trial in result.valid_trials():
        assert {row.region_id for row in trial.rows} == set(trial.configuration)
        for row in trial.rows:
            assert row.features.kind == row.kind
            assert row.choice == trial.configuration[row.region_id]


def test_log_write_read_round_trip(tmp_path):
    m = parse(PROGRAM)
    result = tune(m, iterations=8, seed=5, strategy="random", program="demo")
    paths = write_trial_logs(result, str(tmp_path))
    assert sorted(p.split("/")[-1] for p in paths) == ["demo.fi.csv", "demo.lu.csv"]
    rows = read_trial_logs(paths)
    per_trial = {}
    for row in rows:
        per_trial.setdefault(row.iteration, []).append(row)
    assert len(per_trial) == len(result.valid_trials())
    for trial in result.valid_trials():
        got = {r.region_id: r for r in per_trial[trial.iteration]}
        assert set(got) == set(trial.configuration)
        for region_id, row in got.items():
            assert row.choice == trial.configuration[region_id]
            assert float(row.speedup) == float(trial.speedup_vs_baseline)
            original = next(r.features for r in trial.rows
                            if r.region_id == region_id)
            assert row.features == original


def test_header_reports_both_counts():
    m = parse(PROGRAM)
    result = tune(m, iterations=6, seed=4, strategy="random", program="x")
    header = result.header()
    assert header["iterations"] == 6
    assert header["configurations"] == 6
    assert header["space"] == 98


def _fake_trial(iteration, config):
    from fractions import Fraction

    from mlcomp.autotune import TuningTrial
    from mlcomp.costmodel import Measurement
    from mlcomp.interp import ExecutionProfile

    meas = Measurement(cost=Fraction(100 + iteration), size=1,
                       profile=ExecutionProfile())
    return TuningTrial(iteration=iteration, configuration=config,
                       measurement=meas, speedup_vs_baseline=Fraction(1))
