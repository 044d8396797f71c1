from mlcomp.cleanup import cleanup_module
from mlcomp.interp import interpret
from mlcomp.ir import verify_module

from conftest import parse


def main_block(module, label):
    for block in module.function("main").iter_blocks():
        if block.label == label:
            return block
    raise KeyError(label)


def test_constant_folding_within_block():
    m = parse("""
func main() {
  a = 2
  b = 3
  c = add a, b
  d = mul c, c
  ret d
}
""")
    folded = cleanup_module(m)
    assert interpret(folded).result == 25
    ops = [i.op for i in folded.function("main").iter_instrs()]
    assert "add" not in ops and "mul" not in ops


def test_constant_condition_becomes_plain_branch_and_dead_block_removed():
    m = parse("""
func main() {
  entry:
  c = 1
  br c, yes, no
  yes:
  ret 10
  no:
  ret 20
}
""")
    cleaned = cleanup_module(m)
    verify_module(cleaned)
    labels = [b.label for b in cleaned.function("main").iter_blocks()]
    assert "no" not in labels
    assert interpret(cleaned).result == 10


def test_branch_to_next_block_is_dropped():
    m = parse("""
func main() {
  entry:
  x = add 1, 2
  br next
  next:
  ret x
}
""")
    cleaned = cleanup_module(m)
    assert interpret(cleaned).result == 3
    assert main_block(cleaned, "entry").terminator() is None


def test_unreachable_code_after_ret_is_trimmed():
    m = parse("""
func main() {
  entry:
  ret 1
  junk = add 2, 2
  tail:
  ret junk
}
""")
    cleaned = cleanup_module(m)
    assert [i.op for i in main_block(cleaned, "entry").instrs] == ["ret"]
    labels = [b.label for b in cleaned.function("main").iter_blocks()]
    assert "tail" not in labels


def test_cleanup_preserves_loop_semantics():
    m = parse("""
func main() {
  s = 0
  loop i (iv = 0 to 7 step 1) {
    two = 2
    v = mul i, two
    s = add s, v
  }
  ret s
}
""")
    base = interpret(m).result
    cleaned = cleanup_module(m)
    verify_module(cleaned)
    assert interpret(cleaned).result == base


def test_cleanup_keeps_escape_reachable_blocks():
    m = parse("""
func main(n) {
  loop i (iv = 0 to 8 step 1) {
    br n, out, stay
    stay:
    x = add i, 1
  }
  mid:
  ret 1
  out:
  ret 2
}
""")
    base0 = interpret(m, [0]).result
    base1 = interpret(m, [1]).result
    cleaned = cleanup_module(m)
    verify_module(cleaned)
    assert interpret(cleaned, [0]).result == base0
    assert interpret(cleaned, [1]).result == base1
    labels = [b.label for b in cleaned.function("main").iter_blocks()]
    assert "out" in labels
