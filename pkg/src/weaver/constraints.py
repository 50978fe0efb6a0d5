"""Turning constraints into runnable asserts, and ranking by agreement.

Two translation modes exist per target: ``direct`` compares values with
``==``; ``normalized`` compares ``repr(str(...))`` of both sides, for targets
judged on printed output. A constraint without an expected value just
requires the call to complete.
"""

from __future__ import annotations

import ast
import logging
from dataclasses import dataclass

from .llm import Backend, CompletionCache, GenerationRequest, generate
from .parser import FunctionNode
from .target import TargetConfig

log = logging.getLogger(__name__)


@dataclass
class AssertBlock:
    """Executable assert lines for one function."""

    function: str
    lines: list[str]
    provenance: str  # "user" or "generated"


@dataclass
class CodetScore:
    candidate_index: int
    passed: frozenset[int]  # indices of tests the candidate passed
    agreement: int  # how many candidates share exactly this pass set

    @property
    def score(self) -> int:
        return len(self.passed) * self.agreement


def translate_constraints(fn: FunctionNode, target: TargetConfig) -> AssertBlock:
    """User constraints of ``fn`` as assert lines, in source order."""

    lines: list[str] = []
    for constraint in fn.constraints:
        call = f"{fn.name}({', '.join(constraint.inputs)})"
        if constraint.expected is None:
            lines.append(call)
        elif target.assert_mode == "normalized":
            lines.append(
                f"assert repr(str({call})) == repr(str({constraint.expected}))"
            )
        else:
            lines.append(f"assert {call} == {constraint.expected}")
    return AssertBlock(function=fn.name or "", lines=lines, provenance="user")


def _is_single_assert(line: str) -> bool:
    try:
        tree = ast.parse(line)
    except SyntaxError:
        return False
    return len(tree.body) == 1 and isinstance(tree.body[0], ast.Assert)


def _assert_lines_from(completion: str) -> list[str]:
    lines = []
    for raw in completion.splitlines():
        line = raw.strip()
        if line.startswith("```"):
            continue
        if line.startswith("assert") and _is_single_assert(line):
            lines.append(line)
    return lines


def generate_tests(
    fn: FunctionNode,
    backend: Backend,
    cache: CompletionCache,
    target: TargetConfig,
    n_samples: int = 100,
) -> AssertBlock:
    """Sample test completions for an untested function and pool the asserts.

    Asserts are de-duplicated, keeping first-seen order, so the block is
    deterministic for a deterministic backend.
    """

    if n_samples <= 0:
        return AssertBlock(function=fn.name or "", lines=[], provenance="generated")
    question = target.template("test_question").format(
        description=fn.description, name=fn.name, args=", ".join(fn.args)
    )
    role = target.role("tests")
    request = GenerationRequest(
        prompt=target.template("test_prompt").format(question=question),
        n=n_samples,
        temperature=role.temperature,
        max_tokens=role.max_tokens,
        stop=(),
        presence_penalty=role.presence_penalty,
    )
    pooled: list[str] = []
    seen: set[str] = set()
    for completion in generate(request, backend, cache):
        for line in _assert_lines_from(completion):
            if line not in seen:
                seen.add(line)
                pooled.append(line)
    if not pooled:
        log.warning("no usable asserts generated for %s", fn.name)
    return AssertBlock(function=fn.name or "", lines=pooled, provenance="generated")


def codet_scores(pass_sets: list[frozenset[int]]) -> list[CodetScore]:
    """Score candidates by (tests passed) x (candidates agreeing exactly)."""

    counts: dict[frozenset[int], int] = {}
    for passed in pass_sets:
        counts[passed] = counts.get(passed, 0) + 1
    return [
        CodetScore(candidate_index=i, passed=passed, agreement=counts[passed])
        for i, passed in enumerate(pass_sets)
    ]


def codet_rank(pass_sets: list[frozenset[int]]) -> list[int]:
    """Candidate indices from best to worst; ties keep the lower index first."""

    scores = codet_scores(pass_sets)
    return [
        s.candidate_index
        for s in sorted(scores, key=lambda s: (-s.score, s.candidate_index))
    ]


def min_score_across(blocks: dict[str, list[CodetScore]]) -> int:
    """Aggregate confidence for a whole program: its weakest function."""

    if not blocks:
        return 0
    return min(
        (max((s.score for s in scores), default=0) for scores in blocks.values()),
    )
