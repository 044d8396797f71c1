import pytest

from mlcomp.interp import InterpError, StepLimitExceeded, interpret

from conftest import parse


def test_loop_sum():
    m = parse("""
func main() {
  s = 0
  loop i (iv = 1 to 11 step 1) {
    s = add s, i
  }
  ret s
}
""")
    profile = interpret(m)
    assert profile.result == 55
    assert profile.per_loop_iterations == {"main:i": 10}


def test_determinism():
    m = parse("""
func main(n) {
  s = 0
  loop i (iv = 0 to n step 1) {
    v = mul i, i
    store a[i], v
    u = load a[i]
    s = add s, u
  }
  ret s
}
""")
    assert interpret(m, [9]).key() == interpret(m, [9]).key()


def test_memory_defaults_to_zero():
    m = parse("func main() {\n  x = load a[123]\n  ret x\n}\n")
    assert interpret(m).result == 0


def test_input_arity_checked():
    m = parse("func main(a, b) {\n  ret a\n}\n")
    with pytest.raises(InterpError, match="takes 2 inputs"):
        interpret(m, [1])


def test_negative_step():
    m = parse("""
func main() {
  s = 0
  loop i (iv = 10 to 0 step -2) {
    s = add s, i
  }
  ret s
}
""")
    assert interpret(m).result == 10 + 8 + 6 + 4 + 2


def test_iv_visible_after_loop():
    m = parse("""
func main() {
  loop i (iv = 0 to 10 step 4) {
    x = add i, 0
  }
  ret i
}
""")
    # exit value overshoots the bound on the iv lattice
    assert interpret(m).result == 12


def test_conditional_branch():
    m = parse("""
func main(flag) {
  entry:
  br flag, yes, no
  yes:
  ret 1
  no:
  ret 2
}
""")
    assert interpret(m, [5]).result == 1
    assert interpret(m, [0]).result == 2


def test_call_and_recursion():
    m = parse("""
func main() {
  x = call fib(10)
  ret x
}
func fib(n) {
  entry:
  t = sub n, 1
  br t, rec, base
  base:
  ret n
  rec:
  u = sub n, 2
  br u, rec2, one
  one:
  ret 1
  rec2:
  a = call fib(t)
  b = call fib(u)
  r = add a, b
  ret r
}
""")
    assert interpret(m).result == 55


def test_infinite_loop_hits_step_limit():
    m = parse("""
func main() {
  spin:
  x = add 1, 1
  br spin
}
""")
    with pytest.raises(StepLimitExceeded):
        interpret(m, step_limit=10_000)


def test_branch_cost_accounting():
    straight = parse("func main() {\n  a = add 1, 2\n  ret a\n}\n")
    profile = interpret(straight)
    assert profile.dynamic_instructions == 2
    assert profile.branches_taken == 1  # the ret

    with_call = parse("""
func main() {
  a = call f(1, 2)
  ret a
}
func f(x, y) {
  r = add x, y
  ret r
}
""")
    p = interpret(with_call)
    # call: 1+2 args; callee add+ret; main ret
    assert p.dynamic_instructions == 3 + 2 + 1
    assert p.branches_taken == 3  # call jump, callee ret, main ret
