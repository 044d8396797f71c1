"""Structural analyses: loop forest, branch cycles, call graph.

Counted loop constructs form the loop forest directly (the IR is structured).
Cycles built out of raw br/cbr instructions are detected per region and
reported as excluded regions: they are never unroll candidates. Branches only
target labels in their own region, so such cycles cannot span regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ir import Block, CountedLoop, Function, Module


@dataclass
class ForestLoop:
    """A counted loop with its nesting context resolved."""
    node: CountedLoop
    fn_name: str
    parent: Optional["ForestLoop"] = None
    children: list = field(default_factory=list)
    depth: int = 1  # 1 = outermost

    @property
    def id(self) -> str:
        return self.node.id

    @property
    def header(self) -> str:
        return self.node.body[0].label

    def trip_count(self) -> Optional[int]:
        return self.node.trip_count()

    def own_blocks(self) -> list[Block]:
        return [item for item in self.node.body if isinstance(item, Block)]

    def all_blocks(self) -> list[Block]:
        out = []
        _collect_blocks(self.node.body, out)
        return out

    def own_instr_count(self) -> int:
        return sum(len(b.instrs) for b in self.own_blocks())

    def all_instr_count(self) -> int:
        return sum(len(b.instrs) for b in self.all_blocks())

    def root(self) -> "ForestLoop":
        cur = self
        while cur.parent is not None:
            cur = cur.parent
        return cur

    def height(self) -> int:
        """Max nesting depth of the subtree rooted here, relative to here."""
        if not self.children:
            return 1
        return 1 + max(child.height() for child in self.children)


@dataclass
class CycleRegion:
    """A cycle formed by raw branches; excluded from unroll tuning."""
    fn_name: str
    blocks: tuple[str, ...]
    entries: tuple[str, ...]
    irreducible: bool


@dataclass
class LoopForest:
    fn_name: str
    roots: list[ForestLoop] = field(default_factory=list)
    loops: list[ForestLoop] = field(default_factory=list)  # textual order
    cycles: list[CycleRegion] = field(default_factory=list)

    def by_id(self, loop_id: str) -> ForestLoop:
        for loop in self.loops:
            if loop.id == loop_id:
                return loop
        raise KeyError(loop_id)

    def max_height(self) -> int:
        return max((r.height() for r in self.roots), default=0)


def build_loop_forest(fn: Function) -> LoopForest:
    forest = LoopForest(fn_name=fn.name)

    def walk(items, parent: Optional[ForestLoop], depth: int):
        for item in items:
            if isinstance(item, CountedLoop):
                loop = ForestLoop(node=item, fn_name=fn.name, parent=parent,
                                  depth=depth)
                if parent is None:
                    forest.roots.append(loop)
                else:
                    parent.children.append(loop)
                forest.loops.append(loop)
                walk(item.body, loop, depth + 1)

    walk(fn.body, None, 1)
    _find_cycles(fn.body, fn.name, forest.cycles)
    return forest


def innermost_loop_of_block(forest: LoopForest) -> dict[str, ForestLoop]:
    """Map block label -> innermost enclosing forest loop."""
    owner: dict[str, ForestLoop] = {}
    for loop in forest.loops:
        for block in loop.own_blocks():
            owner[block.label] = loop
    return owner


def block_loop_depth(fn: Function) -> dict[str, int]:
    """Loop nesting depth per block label; 0 outside any loop."""
    depths: dict[str, int] = {}

    def walk(items, depth):
        for item in items:
            if isinstance(item, Block):
                depths[item.label] = depth
            else:
                walk(item.body, depth + 1)

    walk(fn.body, 0)
    return depths


def _collect_blocks(items, out: list) -> None:
    for item in items:
        if isinstance(item, Block):
            out.append(item)
        else:
            _collect_blocks(item.body, out)


# ---------------------------------------------------------------------------
# raw-branch cycles


def _find_cycles(items, fn_name: str, out: list) -> None:
    """Detect br/cbr cycles among one region's items; recurse into loops."""
    n = len(items)
    index_of_label = {item.label: i for i, item in enumerate(items)
                      if isinstance(item, Block)}
    succs: dict[int, set[int]] = {i: set() for i in range(n)}
    for i, item in enumerate(items):
        if isinstance(item, CountedLoop):
            _find_cycles(item.body, fn_name, out)
            if i + 1 < n:
                succs[i].add(i + 1)
            # branches escaping the loop into this region are loop exits
            for target in _escaping_targets(item.body):
                if target in index_of_label:
                    succs[i].add(index_of_label[target])
            continue
        falls = True
        for instr in item.instrs:
            # br/cbr always transfer control; code after them is dead.
            # targets missing from this region escape to an enclosing one.
            if instr.op == "br":
                if instr.args[0] in index_of_label:
                    succs[i].add(index_of_label[instr.args[0]])
                falls = False
                break
            if instr.op == "cbr":
                for target in instr.args[1:]:
                    if target in index_of_label:
                        succs[i].add(index_of_label[target])
                falls = False
                break
            if instr.op == "ret":
                falls = False
                break
        if falls and i + 1 < n:
            succs[i].add(i + 1)

    for scc in _tarjan(range(n), lambda i: succs[i]):
        is_cycle = len(scc) > 1 or (scc[0] in succs[scc[0]])
        if not is_cycle:
            continue
        members = set(scc)
        entries = set()
        for i in range(n):
            if i in members:
                continue
            for s in succs[i]:
                if s in members:
                    entries.add(s)
        if 0 in members:  # region entry falls into the cycle
            entries.add(0)
        labels = tuple(items[i].label for i in sorted(members)
                       if isinstance(items[i], Block))
        entry_labels = tuple(sorted(items[i].label for i in entries
                                    if isinstance(items[i], Block)))
        out.append(CycleRegion(fn_name=fn_name, blocks=labels,
                               entries=entry_labels,
                               irreducible=len(entries) > 1))


def _escaping_targets(items) -> set:
    """Labels branched to from inside a subtree but not defined in it."""
    local = set()
    targets = set()

    def walk(region):
        for item in region:
            if isinstance(item, Block):
                local.add(item.label)
                for instr in item.instrs:
                    if instr.op == "br":
                        targets.add(instr.args[0])
                    elif instr.op == "cbr":
                        targets.update(instr.args[1:])
            else:
                walk(item.body)

    walk(items)
    return targets - local


def _tarjan(nodes, succs_of) -> list[list]:
    """Tarjan SCCs, iterative; returns SCCs in reverse topological order."""
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    sccs: list[list] = []
    counter = [0]

    for start in nodes:
        if start in index:
            continue
        work = [(start, iter(succs_of(start)))]
        index[start] = low[start] = counter[0]
        counter[0] += 1
        stack.append(start)
        on_stack.add(start)
        while work:
            node, it = work[-1]
            advanced = False
            for succ in it:
                if succ not in index:
                    index[succ] = low[succ] = counter[0]
                    counter[0] += 1
                    stack.append(succ)
                    on_stack.add(succ)
                    work.append((succ, iter(succs_of(succ))))
                    advanced = True
                    break
                if succ in on_stack:
                    low[node] = min(low[node], index[succ])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                scc = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    scc.append(member)
                    if member == node:
                        break
                sccs.append(scc)
    return sccs


# ---------------------------------------------------------------------------
# call graph


@dataclass(frozen=True)
class CallSiteRef:
    """A call instruction located in its caller.

    `index` is the position among the caller's call instructions in flattened
    textual order, which keeps ids stable while other callers are inlined.
    """
    caller: str
    index: int
    callee: str
    block: str

    @property
    def id(self) -> str:
        return f"{self.caller}:{self.index}"


def call_sites(fn: Function) -> list[CallSiteRef]:
    sites = []
    k = 0
    for block in fn.iter_blocks():
        for instr in block.instrs:
            if instr.op == "call":
                sites.append(CallSiteRef(caller=fn.name, index=k,
                                         callee=instr.args[0], block=block.label))
                k += 1
    return sites


def call_graph(module: Module) -> dict[str, set[str]]:
    graph: dict[str, set[str]] = {fn.name: set() for fn in module.functions}
    for fn in module.functions:
        for site in call_sites(fn):
            graph[fn.name].add(site.callee)
    return graph


def call_graph_sccs(module: Module) -> list[list[str]]:
    """SCCs of the call graph in bottom-up (callees first) order."""
    graph = call_graph(module)
    return _tarjan(sorted(graph), lambda name: sorted(graph[name]))


def in_call_cycle(module: Module, a: str, b: str) -> bool:
    """True when functions a and b sit in the same call-graph SCC."""
    if a == b:
        graph = call_graph(module)
        return a in graph[a] or _reaches(graph, a, a)
    for scc in call_graph_sccs(module):
        if a in scc and b in scc:
            return True
    return False


def callee_height(module: Module, callee: str) -> int:
    """Longest path to a leaf on the call-graph SCC condensation; leaf = 0."""
    graph = call_graph(module)
    sccs = call_graph_sccs(module)
    scc_of = {name: i for i, scc in enumerate(sccs) for name in scc}
    heights: dict[int, int] = {}
    for i, scc in enumerate(sccs):  # reverse topological: callees first
        succ_heights = [heights[scc_of[t]]
                        for name in scc for t in graph[name]
                        if scc_of[t] != i]
        heights[i] = 0 if not succ_heights else 1 + max(succ_heights)
    return heights[scc_of[callee]]


def _reaches(graph: dict[str, set[str]], src: str, dst: str) -> bool:
    seen = set()
    frontier = list(graph[src])
    while frontier:
        cur = frontier.pop()
        if cur == dst:
            return True
        if cur in seen:
            continue
        seen.add(cur)
        frontier.extend(graph[cur])
    return False
