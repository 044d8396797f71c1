import pytest

from mlcomp.analysis import call_sites
from mlcomp.cleanup import cleanup_module
from mlcomp.interp import interpret
from mlcomp.inline import (InlineError, apply_inline, default_inline_heuristic,
                           inline_legality)
from mlcomp.ir import verify_module

from conftest import parse

BASIC = """
func main() {
  s = 0
  loop i (iv = 0 to 10 step 1) {
    t = call addmul(i, 3)
    s = add s, t
  }
  ret s
}
func addmul(a, b) {
  p = mul a, b
  r = add p, 1
  ret r
}
"""


def count_calls(module, fn="main"):
    return sum(1 for s in call_sites(module.function(fn)))


def test_leaf_inline_drops_call_and_preserves_result():
    m = parse(BASIC)
    base = interpret(m)
    site = call_sites(m.function("main"))[0]
    assert inline_legality(site, m).legal
    inlined = apply_inline(m, site)
    verify_module(inlined)
    assert count_calls(inlined) == count_calls(m) - 1
    p = interpret(inlined)
    assert p.result == base.result
    assert p.branches_taken < base.branches_taken


def test_inline_growth_is_callee_size_minus_call_plus_args():
    m = parse(BASIC)
    site = call_sites(m.function("main"))[0]
    callee_size = m.function("addmul").instr_count()
    nargs = 2
    before = m.function("main").instr_count()
    inlined = cleanup_module(apply_inline(m, site))
    after = inlined.function("main").instr_count()
    assert after - before == callee_size - 1 + nargs


def test_direct_recursion_is_illegal():
    m = parse("""
func main() {
  r = call f(3)
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
  ret r
}
""")
    rec_site = call_sites(m.function("f"))[0]
    report = inline_legality(rec_site, m)
    assert not report.legal and "recursive" in report.reasons
    with pytest.raises(InlineError):
        apply_inline(m, rec_site)


def test_mutual_recursion_is_illegal_both_ways():
    m = parse("""
func main() {
  r = call a(4)
  ret r
}
func a(n) {
  entry:
  br n, go, stop
  stop:
  ret 0
  go:
  t = sub n, 1
  r = call b(t)
  ret r
}
func b(n) {
  t = call a(n)
  ret t
}
""")
    a_site = call_sites(m.function("a"))[0]
    b_site = call_sites(m.function("b"))[0]
    assert not inline_legality(a_site, m).legal
    assert not inline_legality(b_site, m).legal
    # but main -> a is fine
    assert inline_legality(call_sites(m.function("main"))[0], m).legal


def test_entry_callee_is_illegal():
    m = parse("""
func main() {
  ret 0
}
func other() {
  x = call main()
  ret x
}
""")
    site = call_sites(m.function("other"))[0]
    report = inline_legality(site, m)
    assert not report.legal and "entry" in report.reasons


def test_inline_callee_with_loop_and_early_return():
    m = parse("""
func main() {
  a = call find(7)
  b = call find(100)
  r = add a, b
  ret r
}
func find(limit) {
  s = 0
  loop i (iv = 0 to 10 step 1) {
    s = add s, i
    gone = sub s, limit
    br gone, keep, hit
    hit:
    ret i
    keep:
    x = add s, 0
  }
  ret s
}
""")
    base = interpret(m)
    out = m
    for site in reversed(call_sites(m.function("main"))):
        out = apply_inline(out, site)
    verify_module(out)
    assert count_calls(out) == 0
    assert interpret(out).result == base.result


def test_inline_into_loop_body_preserves_semantics():
    m = parse(BASIC)
    base = interpret(m)
    site = call_sites(m.function("main"))[0]
    inlined = apply_inline(m, site)
    # the copy landed inside the loop region and is marked no-unroll
    main = inlined.function("main")
    loop = next(main.iter_loops())
    labels = [b.label for b in loop.body if hasattr(b, "label")]
    assert any(l.startswith("addmul.0.") for l in labels)
    assert interpret(inlined).result == base.result


def test_default_inline_heuristic_size_gate():
    m = parse(BASIC)
    site = call_sites(m.function("main"))[0]
    assert default_inline_heuristic(m, site, size_max=12)
    assert not default_inline_heuristic(m, site, size_max=2)


def test_two_sites_same_callee_inline_independently():
    m = parse("""
func main() {
  a = call sq(3)
  b = call sq(4)
  r = add a, b
  ret r
}
func sq(x) {
  r = mul x, x
  ret r
}
""")
    base = interpret(m).result
    out = m
    for site in reversed(call_sites(m.function("main"))):
        out = apply_inline(out, site)
    verify_module(out)
    assert interpret(out).result == base == 25
    assert count_calls(out) == 0
