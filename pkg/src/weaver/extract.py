"""Call-graph extraction from plain Python source.

Used by backtranslation to turn an existing program into a function graph:
module-level functions, who uses whom, and which function the module-level
code drives (the entry).
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field

from .errors import NoEntryFunction


@dataclass
class ExtractedFunction:
    name: str
    args: list[str]
    line: int
    end_line: int
    body_lines: int
    uses: list[str] = field(default_factory=list)  # defined names, first-use order


@dataclass
class ExtractedCallGraph:
    source: str
    functions: dict[str, ExtractedFunction]
    calls: set[tuple[str, str]]
    module_uses: list[str]  # defined names used by module-level code

    def entry(self) -> str:
        """The function the rest of the file exists to serve.

        Preference order: the unique function no other function uses, broken
        by module-level usage when several qualify.
        """

        used_by_functions = {callee for caller, callee in self.calls if caller != callee}
        candidates = [n for n in self.functions if n not in used_by_functions]
        if len(candidates) == 1:
            return candidates[0]
        pool = candidates or list(self.functions)
        hinted = [n for n in pool if n in self.module_uses]
        if hinted:
            return hinted[0]
        raise NoEntryFunction(
            "no function is identifiable as the entry point "
            f"(candidates: {candidates or sorted(self.functions)})"
        )


def _body_line_count(node: ast.FunctionDef, lines: list[str]) -> int:
    """Non-blank, non-comment lines between the first body statement and the
    end of the function."""

    first = node.body[0].lineno
    last = node.end_lineno or first
    count = 0
    for line in lines[first - 1 : last]:
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            count += 1
    return count


def _used_names(node: ast.AST, defined: set[str], skip_args: set[str]) -> list[str]:
    """Defined function names loaded anywhere under ``node``, first-use order."""

    seen: list[str] = []
    for sub in ast.walk(node):
        if isinstance(sub, ast.Name) and isinstance(sub.ctx, ast.Load):
            if sub.id in defined and sub.id not in skip_args and sub.id not in seen:
                seen.append(sub.id)
    return seen


def extract_call_graph(source: str) -> ExtractedCallGraph:
    """Parse source and report functions, usage edges, and module-level uses.

    Raises SyntaxError when the source does not parse.
    """

    tree = ast.parse(source)
    lines = source.split("\n")
    functions: dict[str, ExtractedFunction] = {}
    fn_nodes: dict[str, ast.FunctionDef] = {}
    for node in tree.body:
        if isinstance(node, ast.FunctionDef):
            args = [a.arg for a in node.args.args]
            defaults = node.args.defaults
            if defaults:
                rendered = []
                split = len(args) - len(defaults)
                for i, name in enumerate(args):
                    if i >= split:
                        rendered.append(
                            f"{name}={ast.unparse(defaults[i - split])}"
                        )
                    else:
                        rendered.append(name)
                args = rendered
            functions[node.name] = ExtractedFunction(
                name=node.name,
                args=args,
                line=node.lineno,
                end_line=node.end_lineno or node.lineno,
                body_lines=_body_line_count(node, lines),
            )
            fn_nodes[node.name] = node

    defined = set(functions)
    calls: set[tuple[str, str]] = set()
    for name, node in fn_nodes.items():
        params = {a.arg for a in node.args.args}
        uses = _used_names(node, defined, params)
        functions[name].uses = uses
        for used in uses:
            calls.add((name, used))

    module_uses: list[str] = []
    for node in tree.body:
        if isinstance(node, ast.FunctionDef):
            continue
        for used in _used_names(node, defined, set()):
            if used not in module_uses:
                module_uses.append(used)

    return ExtractedCallGraph(
        source=source, functions=functions, calls=calls, module_uses=module_uses
    )
