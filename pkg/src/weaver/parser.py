"""Parsing of sketch sources.

A sketch is an indentation-scoped outline of a program: each line either
defines a function (``name(args) -> rets: description``), names an in-scope
function the enclosing definition may call, or states a constraint on the
most recent definition at the same indent (``inputs -> expected``). An
optional free-text header may precede the body, ended by a separator line
such as ``#*#*#``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import (
    AmbiguousLine,
    DuplicateDefinition,
    EmptyProgram,
    IndentError,
    MalformedSignature,
    MissingSignature,
    ParseError,
    UnresolvedReference,
)

# Characters a header separator line may consist of. Deliberately excludes
# quotes, brackets and ">" so constraint expressions cannot be mistaken for
# separators.
SEPARATOR_CHARS = set("#*-=~^_|+")
DEFAULT_SEPARATOR = "#*#*#"
EMIT_INDENT = "    "

_IDENT = re.compile(r"[A-Za-z_]\w*")
_DEF_START = re.compile(r"([A-Za-z_]\w*)\s*\(")

_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = {")": "(", "]": "[", "}": "{"}


class LineKind(enum.Enum):
    BLANK = "blank"
    HEADER_SEPARATOR = "header_separator"
    DEFINITION = "definition"
    REFERENCE = "reference"
    CONSTRAINT = "constraint"


@dataclass
class Constraint:
    """One behavioural requirement, kept verbatim plus split into parts.

    ``inputs`` are the comma-separated argument expressions exactly as
    written; ``expected`` is the text after the top-level ``->`` or None
    when the constraint only demands the call complete without raising.
    """

    raw: str
    inputs: list[str]
    expected: str | None


@dataclass
class FunctionNode:
    """One function in the sketch tree."""

    name: str | None
    args: list[str] = field(default_factory=list)
    rets: list[str] = field(default_factory=list)
    description: str = ""
    constraints: list[Constraint] = field(default_factory=list)
    children: list["FunctionNode"] = field(default_factory=list)
    references: list[str] = field(default_factory=list)
    indent_level: int = 0
    line: int = 0
    parent: "FunctionNode | None" = field(default=None, repr=False, compare=False)

    def ancestors(self) -> Iterator["FunctionNode"]:
        node = self.parent
        while node is not None:
            yield node
            node = node.parent

    def walk(self) -> Iterator["FunctionNode"]:
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class SketchProgram:
    """A parsed sketch: optional header text plus the definition forest."""

    header: str | None
    roots: list[FunctionNode]
    source_lines: list[str]
    warnings: list[str] = field(default_factory=list)

    def functions(self) -> Iterator[FunctionNode]:
        for root in self.roots:
            yield from root.walk()

    def find(self, name: str) -> FunctionNode:
        for node in self.functions():
            if node.name == name:
                return node
        raise KeyError(name)


def is_separator_line(line: str) -> bool:
    stripped = line.strip()
    return (
        line == line.lstrip()
        and len(stripped) >= 3
        and set(stripped) <= SEPARATOR_CHARS
    )


def split_top_level(text: str, sep: str) -> list[str]:
    """Split ``text`` at occurrences of ``sep`` outside brackets and strings."""

    parts: list[str] = []
    depth = 0
    quote: str | None = None
    start = 0
    i = 0
    while i < len(text):
        ch = text[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch in _OPEN:
            depth += 1
        elif ch in _CLOSE:
            depth -= 1
        elif depth == 0 and text.startswith(sep, i):
            parts.append(text[start:i])
            i += len(sep)
            start = i
            continue
        i += 1
    parts.append(text[start:])
    return parts


def _find_top_level(text: str, sep: str) -> int:
    """Index of the first top-level occurrence of ``sep``, or -1."""

    split = split_top_level(text, sep)
    if len(split) == 1:
        return -1
    return len(split[0])


def try_parse_definition(
    line: str, line_no: int | None = None
) -> tuple[str, list[str], list[str], str] | None:
    """Parse ``name(args) [-> rets]: description`` from a stripped line.

    Returns None when the line does not have definition shape. Raises
    MalformedSignature when it clearly tries to be a definition but is
    broken (unbalanced parentheses, empty description, empty returns).
    """

    stripped = line.strip()
    m = _DEF_START.match(stripped)
    if not m:
        return None
    name = m.group(1)
    depth = 0
    quote: str | None = None
    close = -1
    for i in range(m.end() - 1, len(stripped)):
        ch = stripped[i]
        if quote is not None:
            if ch == "\\":
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch in _OPEN:
            depth += 1
        elif ch in _CLOSE:
            depth -= 1
            if depth == 0:
                close = i
                break
    if close < 0:
        raise MalformedSignature(
            f"unbalanced parentheses in signature of {name!r}", line_no
        )
    args_text = stripped[m.end() : close]
    rest = stripped[close + 1 :]
    colon = _find_top_level(rest, ":")
    if colon < 0:
        return None  # a call expression, e.g. the first input of a constraint
    before, desc = rest[:colon], rest[colon + 1 :].strip()
    before = before.strip()
    rets: list[str] = []
    if before.startswith("->"):
        rets = [r.strip() for r in split_top_level(before[2:], ",")]
        rets = [r for r in rets if r]
        if not rets:
            raise MalformedSignature(
                f"empty return list in signature of {name!r}", line_no
            )
    elif before:
        return None  # stray text between ')' and ':' means this is no definition
    if not desc:
        raise MalformedSignature(f"empty description for {name!r}", line_no)
    args = [a.strip() for a in split_top_level(args_text, ",")]
    args = [a for a in args if a]
    return name, args, rets, desc


def parse_constraint(line: str) -> Constraint:
    """Split a constraint line into input expressions and expected output."""

    raw = line.strip()
    arrow = _find_top_level(raw, "->")
    if arrow < 0:
        inputs_text, expected = raw, None
    else:
        inputs_text = raw[:arrow].strip()
        expected = raw[arrow + 2 :].strip()
    inputs = [p.strip() for p in split_top_level(inputs_text, ",")]
    inputs = [p for p in inputs if p]
    return Constraint(raw=raw, inputs=inputs, expected=expected)


def classify_line(line: str, scope: Iterable[str] = ()) -> LineKind:
    """Tell what role a body line plays.

    ``scope`` holds the function names visible at the line's position; a
    bare identifier is a reference exactly when it is one of them.
    """

    if not line.strip():
        return LineKind.BLANK
    if is_separator_line(line):
        return LineKind.HEADER_SEPARATOR
    stripped = line.strip()
    if try_parse_definition(stripped) is not None:
        return LineKind.DEFINITION
    if _IDENT.fullmatch(stripped):
        if stripped in set(scope):
            return LineKind.REFERENCE
        return LineKind.REFERENCE  # resolution (and the error) is parse's job
    return LineKind.CONSTRAINT


def _indent_level(line: str, unit: str | None, line_no: int) -> int:
    ws = line[: len(line) - len(line.lstrip())]
    if not ws:
        return 0
    if unit is None:
        raise IndentError("indented line before any indentation unit was set", line_no)
    if set(ws) - set(unit):
        raise IndentError("mixed tabs and spaces in indentation", line_no)
    if len(ws) % len(unit):
        raise IndentError(
            f"indentation of {len(ws)} is not a multiple of the unit ({len(unit)})",
            line_no,
        )
    return len(ws) // len(unit)


def _scope_chain(owner: FunctionNode | None, roots: list[FunctionNode]):
    """Nodes whose names (and direct children's names) are visible from owner."""

    chain: list[FunctionNode] = []
    node = owner
    while node is not None:
        chain.append(node)
        node = node.parent
    return chain


def _resolve(name: str, owner: FunctionNode | None, roots: list[FunctionNode]):
    for node in _scope_chain(owner, roots):
        if node.name == name:
            return node
        for child in node.children:
            if child.name == name:
                return child
    for root in roots:  # the virtual root's direct children
        if root.name == name:
            return root
    return None


def parse_program(
    text: str, *, strict: bool = False, allow_unnamed: bool = False
) -> SketchProgram:
    """Parse sketch source into a program tree.

    ``strict`` upgrades the lenient recoveries (duplicate definitions,
    redundant references) to errors. ``allow_unnamed`` keeps description-only
    lines as nodes with ``name=None`` for later signature inference instead
    of rejecting them. References may point forward: resolution happens once
    the whole tree is known.
    """

    source_lines = text.replace("\r\n", "\n").split("\n")

    header: str | None = None
    body_start = 0
    for i, line in enumerate(source_lines):
        if is_separator_line(line):
            header_text = "\n".join(source_lines[:i]).strip("\n")
            header = header_text or None
            body_start = i + 1
            break

    body = source_lines[body_start:]

    unit: str | None = None
    for line in body:
        if not line.strip():
            continue
        ws = line[: len(line) - len(line.lstrip())]
        if ws:
            if len(set(ws)) > 1:
                raise IndentError("mixed tabs and spaces in indentation")
            unit = ws
            break

    roots: list[FunctionNode] = []
    warnings: list[str] = []
    last_at_indent: dict[int, FunctionNode] = {}
    names: dict[str, FunctionNode] = {}
    # (owner, name, line, came from a downgraded duplicate definition).
    # References resolve after the whole tree is built so that forward
    # references to in-scope functions defined further down still work.
    pending_refs: list[tuple[FunctionNode, str, int, bool]] = []

    def clear_deeper(level: int) -> None:
        for k in [k for k in last_at_indent if k > level]:
            del last_at_indent[k]

    def attach(node: FunctionNode, level: int, line_no: int) -> None:
        if level == 0:
            roots.append(node)
        else:
            parent = last_at_indent.get(level - 1)
            if parent is None:
                if not last_at_indent:
                    raise IndentError("first line of the body is indented", line_no)
                raise IndentError(
                    "indentation increases by more than one unit", line_no
                )
            node.parent = parent
            parent.children.append(node)
        clear_deeper(level)
        last_at_indent[level] = node
        if node.name is not None:
            names[node.name] = node

    for offset, line in enumerate(body):
        line_no = body_start + offset + 1
        if not line.strip():
            continue
        stripped = line.strip()
        level = _indent_level(line, unit, line_no)

        parsed = try_parse_definition(stripped, line_no)
        if parsed is not None:
            name, args, rets, desc = parsed
            would_be_parent = last_at_indent.get(level - 1) if level else None
            existing = _resolve(name, would_be_parent, roots)
            if existing is not None:
                if strict:
                    raise DuplicateDefinition(
                        f"{name!r} is already defined in scope", line_no
                    )
                if would_be_parent is not None:
                    pending_refs.append((would_be_parent, name, line_no, True))
                warnings.append(
                    f"line {line_no}: duplicate definition of {name!r} kept as a reference"
                )
                continue
            if name in names:
                raise DuplicateDefinition(
                    f"{name!r} is already defined elsewhere; function names share one namespace",
                    line_no,
                )
            attach(
                FunctionNode(
                    name=name,
                    args=args,
                    rets=rets,
                    description=desc,
                    indent_level=level,
                    line=line_no,
                ),
                level,
                line_no,
            )
            continue

        if _IDENT.fullmatch(stripped):
            owner = last_at_indent.get(level - 1) if level else None
            if owner is None:
                raise UnresolvedReference(
                    f"reference {stripped!r} has no enclosing definition", line_no
                )
            pending_refs.append((owner, stripped, line_no, False))
            continue

        owner = last_at_indent.get(level)
        if owner is not None:
            owner.constraints.append(parse_constraint(stripped))
            continue

        # No definition at this indent yet: the line can only be a
        # description-only definition (signature inferred later) or a mistake.
        if allow_unnamed:
            if level and last_at_indent.get(level - 1) is None:
                raise IndentError(
                    "indentation increases by more than one unit", line_no
                )
            attach(
                FunctionNode(
                    name=None, description=stripped, indent_level=level, line=line_no
                ),
                level,
                line_no,
            )
            continue
        if not last_at_indent and level > 0:
            raise IndentError("first line of the body is indented", line_no)
        raise MissingSignature(
            f"no function at this indent to attach {stripped!r} to "
            "(a description-only line needs signature inference enabled)",
            line_no,
        )

    if not roots:
        raise EmptyProgram("no function definitions found")

    for owner, name, line_no, downgraded in pending_refs:
        if _resolve(name, owner, roots) is None:
            raise UnresolvedReference(
                f"{name!r} does not name an ancestor or a sibling-in-scope function",
                line_no,
            )
        redundant = name in owner.references or any(
            child.name == name for child in owner.children
        )
        if not redundant:
            owner.references.append(name)
        elif not downgraded:
            if strict:
                raise AmbiguousLine(
                    f"reference {name!r} is already implied here", line_no
                )
            warnings.append(f"line {line_no}: redundant reference {name!r}")

    return SketchProgram(
        header=header, roots=roots, source_lines=source_lines, warnings=warnings
    )


def _definition_line(node: FunctionNode) -> str:
    if node.name is None:
        return node.description
    sig = f"{node.name}({', '.join(node.args)})"
    if node.rets:
        sig += f" -> {', '.join(node.rets)}"
    return f"{sig}: {node.description}"


def emit_sketch(program: SketchProgram) -> str:
    """Render a program back to sketch source.

    The result is not byte-identical to the original (indent width is
    normalised, children precede references) but parses back to an
    isomorphic tree: same names, edges, references and constraint texts.
    """

    lines: list[str] = []
    if program.header:
        lines.extend(program.header.split("\n"))
        lines.append(DEFAULT_SEPARATOR)

    def emit(node: FunctionNode, level: int) -> None:
        pad = EMIT_INDENT * level
        lines.append(pad + _definition_line(node))
        for constraint in node.constraints:
            lines.append(pad + constraint.raw)
        for child in node.children:
            emit(child, level + 1)
        for ref in node.references:
            lines.append(EMIT_INDENT * (level + 1) + ref)

    for root in program.roots:
        emit(root, 0)
    return "\n".join(lines) + "\n"
