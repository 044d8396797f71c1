import itertools

import pytest

from mlcomp.analysis import build_loop_forest
from mlcomp.interp import interpret
from mlcomp.unroll import (NO_UNROLL, UnrollConfig, UnrollDecision, UnrollError,
                           UnrollType, apply_unroll, default_unroll_heuristic,
                           derive_decision, unroll_legality)

from conftest import parse


def loop_and_forest(module, fn_name="main", loop_id=None):
    forest = build_loop_forest(module.function(fn_name))
    loop = forest.loops[0] if loop_id is None else forest.by_id(loop_id)
    return loop, forest


# ---------------------------------------------------------------------------
# decisions


def test_derive_decision_rules():
    assert derive_decision(0, 10) == NO_UNROLL
    assert derive_decision(1, None) == NO_UNROLL
    assert derive_decision(4, None) == UnrollDecision(UnrollType.RUNTIME, 4)
    assert derive_decision(4, 10) == UnrollDecision(UnrollType.PARTIAL, 4)
    assert derive_decision(16, 10) == UnrollDecision(UnrollType.FULL, 10)
    assert derive_decision(8, 8) == UnrollDecision(UnrollType.FULL, 8)


def test_default_heuristic_bounds():
    small = parse("""
func main() {
  loop i (iv = 0 to 8 step 1) {
    x = add i, 1
  }
  ret 0
}
""")
    loop, _ = loop_and_forest(small)
    decision = default_unroll_heuristic(loop, UnrollConfig())
    assert decision.type == UnrollType.FULL and decision.count == 8

    long_trip = parse("""
func main() {
  loop i (iv = 0 to 9 step 1) {
    x = add i, 1
  }
  ret 0
}
""")
    loop, _ = loop_and_forest(long_trip)
    assert default_unroll_heuristic(loop, UnrollConfig()).is_noop()


# ---------------------------------------------------------------------------
# legality


def test_straight_line_counted_loop_is_legal():
    m = parse("""
func main() {
  loop i (iv = 0 to 8 step 1) {
    x = add i, 1
  }
  ret 0
}
""")
    loop, forest = loop_and_forest(m)
    assert unroll_legality(loop, forest).legal


def test_irreducible_region_is_illegal():
    m = parse("""
func main(flag) {
  entry:
  br flag, a, b
  a:
  x = add 1, 0
  br b
  b:
  y = add 2, 0
  br y, a, out
  out:
  ret 0
}
""")
    forest = build_loop_forest(m.function("main"))
    report = unroll_legality(forest.cycles[0], forest)
    assert not report.legal
    assert "irreducible" in report.reasons


def test_raw_branch_cycle_is_not_counted():
    m = parse("""
func main(n) {
  top:
  n = sub n, 1
  br n, top, out
  out:
  ret n
}
""")
    forest = build_loop_forest(m.function("main"))
    report = unroll_legality(forest.cycles[0], forest)
    assert not report.legal
    assert "not-counted" in report.reasons


def test_oversized_body_is_illegal():
    instrs = "\n".join(f"    x{k} = add i, {k}" for k in range(130))
    m = parse(f"""
func main() {{
  loop i (iv = 0 to 8 step 1) {{
{instrs}
  }}
  ret 0
}}
""")
    loop, forest = loop_and_forest(m)
    report = unroll_legality(loop, forest, UnrollConfig())
    assert not report.legal
    assert "size" in report.reasons


def test_explicit_backedge_is_illegal():
    m = parse("""
func main(n) {
  loop i (iv = 0 to 8 step 1) {
    head:
    x = add i, 1
    br x, head, tail
    tail:
    y = add x, 1
  }
  ret 0
}
""")
    loop, forest = loop_and_forest(m)
    report = unroll_legality(loop, forest)
    assert not report.legal
    assert "backedge" in report.reasons


def test_escaping_branch_is_illegal():
    m = parse("""
func main(n) {
  loop i (iv = 0 to 8 step 1) {
    br n, done, stay
    stay:
    x = add i, 1
  }
  done:
  ret 0
}
""")
    loop, forest = loop_and_forest(m)
    report = unroll_legality(loop, forest)
    assert not report.legal
    assert "escape" in report.reasons


# ---------------------------------------------------------------------------
# the transform


SUM10 = """
func main() {
  s = 0
  loop i (iv = 0 to 10 step 1) {
    v = mul i, 3
    s = add s, v
  }
  t = add s, i
  ret t
}
"""


def test_noop_decision_returns_function_unchanged():
    m = parse(SUM10)
    fn = m.function("main")
    assert apply_unroll(fn, "i", NO_UNROLL) is fn


def test_full_unroll_removes_backedges():
    m = parse(SUM10)
    base = interpret(m)
    unrolled = m.replace_function(
        apply_unroll(m.function("main"), "i", derive_decision(16, 10)))
    p = interpret(unrolled)
    assert p.result == base.result
    assert "main:i" not in p.per_loop_iterations
    assert p.branches_taken < base.branches_taken


def test_partial_unroll_preserves_result_with_remainder():
    m = parse(SUM10)
    base = interpret(m)
    unrolled = m.replace_function(
        apply_unroll(m.function("main"), "i",
                     UnrollDecision(UnrollType.PARTIAL, 4)))
    p = interpret(unrolled)
    assert p.result == base.result
    # main loop runs 2 iterations of 4; remainder of 2 is a static epilogue
    assert p.per_loop_iterations["main:i"] == 2
    assert p.branches_taken < base.branches_taken


def test_full_unroll_requires_known_trip():
    m = parse("""
func main(n) {
  loop i (iv = 0 to n step 1) {
    x = add i, 1
  }
  ret 0
}
""")
    with pytest.raises(UnrollError, match="known trip"):
        apply_unroll(m.function("main"), "i",
                     UnrollDecision(UnrollType.FULL, 8))


def test_runtime_unroll_preserves_result_across_bounds():
    m = parse("""
func main(n) {
  s = 0
  loop i (iv = 0 to n step 1) {
    u = load a[i]
    v = add u, i
    store a[i], v
    s = add s, v
  }
  t = mul i, 10
  r = add s, t
  ret r
}
""")
    for count in (2, 4, 8):
        transformed = m.replace_function(
            apply_unroll(m.function("main"), "i",
                         UnrollDecision(UnrollType.RUNTIME, count)))
        for n in (0, 1, count - 1, count, count + 1, 3 * count + 2, 40):
            base = interpret(m, [n])
            got = interpret(transformed, [n])
            assert got.result == base.result, (count, n)


def test_unrolled_loops_are_marked():
    m = parse(SUM10)
    unrolled = apply_unroll(m.function("main"), "i",
                            UnrollDecision(UnrollType.PARTIAL, 4))
    loops = list(unrolled.iter_loops())
    assert loops and all(l.no_unroll for l in loops)


def test_nested_unroll_inside_and_out():
    m = parse("""
func main() {
  s = 0
  loop i (iv = 0 to 6 step 1) {
    loop j (iv = 0 to i step 1) {
      s = add s, j
    }
    s = add s, i
  }
  ret s
}
""")
    base = interpret(m)
    # full-unroll the outer loop; inner copies get literal bounds
    out = m.replace_function(
        apply_unroll(m.function("main"), "i", derive_decision(64, 6)))
    p = interpret(out)
    assert p.result == base.result
    inner_ids = [l.id for l in out.function("main").iter_loops()]
    assert len(inner_ids) == 6 and len(set(inner_ids)) == 6


def test_exhaustive_semantics_preservation_small():
    m = parse(SUM10)
    base = interpret(m).result
    trip = 10
    for count in (0, 2, 4, 8, 16, 32, 64):
        decision = derive_decision(count, trip)
        got = m.replace_function(apply_unroll(m.function("main"), "i", decision))
        assert interpret(got).result == base, count


def test_partial_counts_exhaustive_grid():
    # every (trip, count) pair with 2 <= count < trip preserves iteration sums
    for trip, count in itertools.product((3, 5, 8, 12), (2, 3, 4, 5)):
        if count >= trip:
            continue
        m = parse(f"""
func main() {{
  s = 0
  loop i (iv = 0 to {trip} step 1) {{
    s = add s, i
  }}
  ret s
}}
""")
        got = m.replace_function(
            apply_unroll(m.function("main"), "i",
                         UnrollDecision(UnrollType.PARTIAL, count)))
        assert interpret(got).result == trip * (trip - 1) // 2, (trip, count)
