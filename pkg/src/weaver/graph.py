"""Call graphs, test-dependency graphs, and their strongly connected parts.

The call graph has an edge f -> g when f's sketch node lists g as a child or
reference. The test-dependency graph adds g -> f for every constraint-less g
and caller f, so a function without tests of its own gets solved jointly with
whoever exercises it. Components of that graph are the units of search.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .parser import FunctionNode, SketchProgram


@dataclass
class DependencyGraph:
    """Functions as nodes (source order) and directed call/test edges."""

    nodes: list[str]
    edges: set[tuple[str, str]]
    origin: dict[str, FunctionNode]

    def successors(self, name: str) -> list[str]:
        out = [b for (a, b) in self.edges if a == name]
        order = {n: i for i, n in enumerate(self.nodes)}
        return sorted(out, key=order.__getitem__)


class SccState(enum.Enum):
    PENDING = "pending"
    SOLVED = "solved"
    FAILED = "failed"


@dataclass
class SccPlan:
    """One strongly connected component, scheduled for joint synthesis."""

    index: int
    members: tuple[str, ...]
    dependencies: set[int] = field(default_factory=set)
    state: SccState = SccState.PENDING
    solution: str | None = None


def _node_order(program: SketchProgram) -> list[FunctionNode]:
    return sorted(program.functions(), key=lambda n: n.line)


def build_call_graph(program: SketchProgram) -> DependencyGraph:
    """Edges from each function to everything it is allowed to call."""

    ordered = _node_order(program)
    origin = {}
    for node in ordered:
        if node.name is None:
            raise ValueError("call graph needs every function named (run inference first)")
        origin[node.name] = node
    nodes = [n.name for n in ordered]
    edges: set[tuple[str, str]] = set()
    for node in ordered:
        for child in node.children:
            edges.add((node.name, child.name))
        for ref in node.references:
            edges.add((node.name, ref))
    return DependencyGraph(nodes=nodes, edges=edges, origin=origin)


def build_test_dependency_graph(
    program: SketchProgram, *, implicit_constraints: bool = False
) -> DependencyGraph:
    """Call graph plus back edges from untested functions to their callers.

    Targets whose constraints are implicit in the definitions (proof-style
    targets) keep the plain call graph.
    """

    graph = build_call_graph(program)
    if implicit_constraints:
        return graph
    edges = set(graph.edges)
    for name, node in graph.origin.items():
        if node.constraints:
            continue
        for caller, callee in graph.edges:
            if callee == name:
                edges.add((name, caller))
    return DependencyGraph(nodes=graph.nodes, edges=edges, origin=graph.origin)


def strongly_connected_components(graph: DependencyGraph) -> list[SccPlan]:
    """Tarjan's algorithm, iterative, with deterministic output.

    Components come out ordered by the source position of their earliest
    member; member tuples are in source order too.
    """

    order = {n: i for i, n in enumerate(graph.nodes)}
    adj: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for a, b in sorted(graph.edges, key=lambda e: (order[e[0]], order[e[1]])):
        adj[a].append(b)

    index_of: dict[str, int] = {}
    lowlink: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    counter = 0
    components: list[tuple[str, ...]] = []

    for start in graph.nodes:
        if start in index_of:
            continue
        work: list[tuple[str, int]] = [(start, 0)]
        while work:
            node, child_i = work.pop()
            if child_i == 0:
                index_of[node] = lowlink[node] = counter
                counter += 1
                stack.append(node)
                on_stack.add(node)
            advanced = False
            for i in range(child_i, len(adj[node])):
                nxt = adj[node][i]
                if nxt not in index_of:
                    work.append((node, i + 1))
                    work.append((nxt, 0))
                    advanced = True
                    break
                if nxt in on_stack:
                    lowlink[node] = min(lowlink[node], index_of[nxt])
            if advanced:
                continue
            if lowlink[node] == index_of[node]:
                members = []
                while True:
                    top = stack.pop()
                    on_stack.discard(top)
                    members.append(top)
                    if top == node:
                        break
                components.append(tuple(sorted(members, key=order.__getitem__)))
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])

    components.sort(key=lambda ms: order[ms[0]])
    plans = [SccPlan(index=i, members=ms) for i, ms in enumerate(components)]
    scc_of = {name: plan.index for plan in plans for name in plan.members}
    for a, b in graph.edges:
        if scc_of[a] != scc_of[b]:
            plans[scc_of[a]].dependencies.add(scc_of[b])
    return plans


def synthesis_order(plans: list[SccPlan]) -> list[SccPlan]:
    """Dependencies-first topological order, ties broken by source position.

    SccPlan indices already reflect source position of the earliest member,
    so the tie-break is simply the smallest ready index.
    """

    remaining = {p.index: set(p.dependencies) for p in plans}
    by_index = {p.index: p for p in plans}
    out: list[SccPlan] = []
    while remaining:
        ready = sorted(i for i, deps in remaining.items() if not deps)
        if not ready:
            raise ValueError("dependency cycle across components; decomposition is broken")
        nxt = ready[0]
        out.append(by_index[nxt])
        del remaining[nxt]
        for deps in remaining.values():
            deps.discard(nxt)
    return out


def to_dot(graph: DependencyGraph, plans: list[SccPlan] | None = None) -> str:
    """Graphviz rendering; components become clusters when given."""

    lines = ["digraph dependencies {"]
    if plans:
        for plan in plans:
            lines.append(f"  subgraph cluster_{plan.index} {{")
            lines.append(f'    label="scc {plan.index}";')
            for name in plan.members:
                lines.append(f'    "{name}";')
            lines.append("  }")
    else:
        for name in graph.nodes:
            lines.append(f'  "{name}";')
    order = {n: i for i, n in enumerate(graph.nodes)}
    for a, b in sorted(graph.edges, key=lambda e: (order[e[0]], order[e[1]])):
        lines.append(f'  "{a}" -> "{b}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
