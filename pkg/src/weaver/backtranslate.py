"""Turning working programs back into sketches.

The reverse direction: given plain source plus its asserts, recover a sketch
whose tree mirrors the call structure and whose constraints are the tests.
The output re-parses and can be re-synthesized, which makes it usable as
training or evaluation material.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from . import llm
from .errors import NoEntryFunction, ParseError
from .extract import ExtractedCallGraph, extract_call_graph
from .llm import CompletionCache, GenerationRequest
from .parser import (
    FunctionNode,
    SketchProgram,
    emit_sketch,
    parse_constraint,
    parse_program,
)
from .target import TargetConfig

log = logging.getLogger(__name__)

MIN_FUNCTIONS_IN_USE = 3
LONG_BODY = 5  # at least one function this long...
MAX_BODY = 15  # ...and none longer than this


def eligibility(graph: ExtractedCallGraph) -> str | None:
    """Why a program is unsuitable for backtranslation, or None if it is fine.

    Wanted: enough structure that a sketch says something (three or more
    functions actually in use), at least one body of substance, and nothing
    so long that a single description could not cover it.
    """

    used = {callee for _, callee in graph.calls} | set(graph.module_uses)
    try:
        used.add(graph.entry())
    except NoEntryFunction:
        return "no identifiable entry function"
    in_use = [f for name, f in graph.functions.items() if name in used]
    if len(in_use) < MIN_FUNCTIONS_IN_USE:
        return f"only {len(in_use)} functions in use (need {MIN_FUNCTIONS_IN_USE})"
    sizes = [f.body_lines for f in in_use]
    if max(sizes) < LONG_BODY:
        return f"all bodies shorter than {LONG_BODY} lines"
    if max(sizes) > MAX_BODY:
        return f"a body exceeds {MAX_BODY} lines"
    return None


def eligible(graph: ExtractedCallGraph) -> bool:
    return eligibility(graph) is None


def _function_source(graph: ExtractedCallGraph, name: str) -> str:
    fn = graph.functions[name]
    lines = graph.source.split("\n")
    return "\n".join(lines[fn.line - 1 : fn.end_line])


def describe_function(
    graph: ExtractedCallGraph,
    name: str,
    backend: llm.Backend,
    cache: CompletionCache,
    target: TargetConfig,
) -> str:
    """One-sentence description of a function, in the function's own words.

    The prompt ends mid-line with the function's name, so the completion
    continues it; name plus first line is the description.
    """

    role = target.role("translation")
    request = GenerationRequest(
        prompt=target.template("describe_prompt").format(
            source=_function_source(graph, name), name=name
        ),
        n=1,
        temperature=role.temperature,
        max_tokens=role.max_tokens,
        stop=("\n",),
        logit_bias_tags=role.logit_bias_tags,
        presence_penalty=role.presence_penalty,
    )
    completion = llm.generate(request, backend, cache)[0]
    tail = completion.split("\n")[0].strip()
    while tail[:1] in {":", "-", "#"}:
        tail = tail[1:].strip()
    if not tail:
        return f"{name}, see the call sites"
    return f"{name} {tail}"


def _placement(graph: ExtractedCallGraph) -> dict[str, str | None]:
    """Tree parent for every function (None means top level).

    A function with exactly one caller nests under it; anything shared, or
    uncalled, goes to the top level where every scope can see it. Pure
    single-caller cycles get their earliest member hoisted.
    """

    by_line = sorted(graph.functions, key=lambda n: graph.functions[n].line)
    callers: dict[str, list[str]] = {name: [] for name in by_line}
    for caller, callee in sorted(
        graph.calls, key=lambda e: (graph.functions[e[0]].line, graph.functions[e[1]].line)
    ):
        if caller != callee:
            callers[callee].append(caller)

    parent: dict[str, str | None] = {}
    for name in by_line:
        parent[name] = callers[name][0] if len(callers[name]) == 1 else None

    # Break parent cycles: walk up from each node; a revisit inside the
    # current walk means a cycle, whose earliest-defined member goes top level.
    settled: set[str] = set()
    for name in by_line:
        trail: list[str] = []
        node: str | None = name
        while node is not None and node not in settled:
            if node in trail:
                cycle = trail[trail.index(node):]
                head = min(cycle, key=lambda n: graph.functions[n].line)
                parent[head] = None
                break
            trail.append(node)
            node = parent[node]
        settled.update(trail)
    return parent


def graph_to_sketch(
    graph: ExtractedCallGraph,
    descriptions: dict[str, str],
    tests: list[str],
) -> SketchProgram:
    """Build the sketch tree for an extracted program.

    Call edges not covered by the parent relation become references; the
    tests become constraints on the entry function.
    """

    parent = _placement(graph)
    by_line = sorted(graph.functions, key=lambda n: graph.functions[n].line)
    nodes: dict[str, FunctionNode] = {}
    for name in by_line:
        fn = graph.functions[name]
        nodes[name] = FunctionNode(
            name=name,
            args=list(fn.args),
            description=descriptions.get(name, name),
            line=fn.line,
        )

    roots: list[FunctionNode] = []
    for name in by_line:
        node = nodes[name]
        if parent[name] is None:
            roots.append(node)
        else:
            owner = nodes[parent[name]]
            node.parent = owner
            node.indent_level = owner.indent_level + 1
            owner.children.append(node)

    for caller, callee in sorted(
        graph.calls, key=lambda e: (graph.functions[e[0]].line, graph.functions[e[1]].line)
    ):
        if caller == callee or parent[callee] == caller:
            continue
        if callee not in nodes[caller].references:
            nodes[caller].references.append(callee)

    entry = nodes[graph.entry()]
    for line in tests:
        stripped = line.strip()
        if stripped:
            entry.constraints.append(parse_constraint(stripped))

    return SketchProgram(header=None, roots=roots, source_lines=[], warnings=[])


@dataclass
class BacktranslationResult:
    name: str
    status: str  # "written" or "skipped"
    detail: str = ""
    sketch_path: Path | None = None


def backtranslate_source(
    source: str,
    tests: list[str],
    backend: llm.Backend,
    cache: CompletionCache,
    target: TargetConfig,
) -> SketchProgram | str:
    """Sketch for one program, or the reason it was rejected."""

    try:
        graph = extract_call_graph(source)
    except SyntaxError as exc:
        return f"source does not parse: {exc.msg}"
    reason = eligibility(graph)
    if reason is not None:
        return reason
    descriptions = {
        name: describe_function(graph, name, backend, cache, target)
        for name in sorted(graph.functions, key=lambda n: graph.functions[n].line)
    }
    return graph_to_sketch(graph, descriptions, tests)


def run_corpus(
    src_dir: str | Path,
    out_dir: str | Path,
    backend: llm.Backend,
    cache: CompletionCache,
    target: TargetConfig,
) -> list[BacktranslationResult]:
    """Backtranslate every ``<id>.src`` in a directory to ``<id>.ss``.

    A sibling ``<id>.tests`` file, when present, supplies one constraint per
    line. Sketches that fail to re-parse are bugs, not skips: they raise.
    """

    src_dir = Path(src_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: list[BacktranslationResult] = []
    for src_path in sorted(src_dir.glob("*.src")):
        name = src_path.stem
        tests_path = src_path.with_suffix(".tests")
        tests = (
            tests_path.read_text().splitlines() if tests_path.exists() else []
        )
        outcome = backtranslate_source(
            src_path.read_text(), tests, backend, cache, target
        )
        if isinstance(outcome, str):
            log.info("skipping %s: %s", name, outcome)
            results.append(BacktranslationResult(name, "skipped", outcome))
            continue
        text = emit_sketch(outcome)
        try:
            parse_program(text)
        except ParseError as exc:
            raise ParseError(
                f"backtranslated sketch for {name} does not re-parse: {exc}"
            ) from exc
        sketch_path = out_dir / f"{name}.ss"
        sketch_path.write_text(text)
        results.append(
            BacktranslationResult(name, "written", sketch_path=sketch_path)
        )
    return results
