"""Combinatorial synthesis over the component DAG.

Each strongly connected component of the test-dependency graph is solved in
dependency order: sample candidate implementations for every member, then
walk combinations from the direct product until one satisfies the
component's asserts. Budget is global; trying components separately keeps
the worst case at sum(n^|scc|) evaluations instead of n^(total functions).
"""

from __future__ import annotations

import ast
import logging
import random
from dataclasses import asdict, dataclass, field
from math import prod
from typing import Iterator, Sequence

from . import llm
from .constraints import codet_rank, generate_tests, translate_constraints
from .errors import BudgetExhausted, FixtureMissing, SynthesisFailed
from .executor import EvalRequest, Executor, UNDEFINED_NAME
from .graph import (
    SccPlan,
    SccState,
    build_test_dependency_graph,
    strongly_connected_components,
    synthesis_order,
)
from .llm import CandidateSet, CompletionCache, GenerationRequest
from .parser import FunctionNode, SketchProgram, split_top_level
from .target import TargetConfig

log = logging.getLogger(__name__)


@dataclass
class SynthOptions:
    n_implementations: int = 16
    eval_budget: int = 100_000
    timeout_per_eval: float = 0.04
    allow_autofill: bool = False
    autofill_depth_limit: int = 2
    allow_autodecomp: bool = False
    autodecomp_rounds: int = 1
    backtrack_rounds: int = 1
    rng_seed: int = 0
    search_order: str = "shuffled"  # "shuffled" (greedy probe first) or "sequential"
    prompt_prefix_cap: int = 6000
    allow_test_generation: bool = False
    generated_test_samples: int = 100


@dataclass
class SynthesizedProgram:
    assembled_source: str
    chosen: dict[str, int]
    evaluations_used: int
    provenance: list[dict]
    manifest: dict = field(default_factory=dict)


def direct_sampling_success(m: int, k: int) -> float:
    """Chance that one of k whole-program samples over m chained functions is
    fully correct, when each function has one correct option in k."""

    return 1.0 - (1.0 - k ** (1 - m)) ** k


def _unrank(rank: int, sizes: Sequence[int]) -> tuple[int, ...]:
    out = []
    for size in reversed(sizes):
        out.append(rank % size)
        rank //= size
    return tuple(reversed(out))


def enumerate_combinations(
    candidate_sets: Sequence[Sequence], budget: int, rng: random.Random
) -> Iterator[tuple[int, ...]]:
    """Uniformly sample index vectors from the direct product, no repeats.

    At most ``budget`` vectors are produced; when the budget covers the whole
    product, every vector appears exactly once.
    """

    sizes = [len(s) for s in candidate_sets]
    if not sizes or any(size == 0 for size in sizes):
        return
    total = prod(sizes)
    count = min(budget, total)
    if count <= 0:
        return
    for rank in rng.sample(range(total), count):
        yield _unrank(rank, sizes)


class _NoSolution(Exception):
    """Internal: a component's search space is exhausted."""


class _Synthesis:
    def __init__(
        self,
        program: SketchProgram,
        target: TargetConfig,
        backend: llm.Backend | None,
        cache: CompletionCache,
        executor: Executor | None,
        options: SynthOptions,
    ):
        self.program = program
        self.target = target
        self.backend = backend
        self.cache = cache
        self.executor = executor
        self.options = options
        self.rng = random.Random(options.rng_seed)
        self.evaluations_used = 0
        self._eval_counter = 0
        self.node_by_name: dict[str, FunctionNode] = {}
        self.records: list[dict] = []
        self.plans: list[SccPlan] = []
        self.order: list[SccPlan] = []

    # ---------------- plumbing ----------------

    def _register_nodes(self) -> None:
        for node in self.program.functions():
            if node.name is None:
                if self.backend is None:
                    raise SynthesisFailed("program has unnamed functions and no backend")
                name, args = llm.infer_signature(
                    node.description, self.backend, self.cache, self.target
                )
                if name in self.node_by_name:
                    raise SynthesisFailed(f"inferred name {name!r} collides")
                node.name = name
                node.args = args
            self.node_by_name[node.name] = node

    def _child_nodes(self, fn: FunctionNode) -> tuple[FunctionNode, ...]:
        out: list[FunctionNode] = list(fn.children)
        names = {c.name for c in fn.children}
        for ref in fn.references:
            if ref not in names:
                node = self.node_by_name.get(ref)
                if node is not None:
                    out.append(node)
                    names.add(ref)
        return tuple(out)

    def _prelude(self, plan: SccPlan, extra: Sequence[str] = ()) -> str:
        reachable: set[int] = set()
        stack = [plan.index]
        while stack:
            for dep in self.plans[stack.pop()].dependencies:
                if dep not in reachable:
                    reachable.add(dep)
                    stack.append(dep)
        texts = [p.solution for p in self.order if p.index in reachable and p.solution]
        texts.extend(extra)
        return "\n\n".join(texts)

    def _admissible(self, rendered: str) -> bool:
        if self.target.admission != "ast":
            return True
        try:
            tree = ast.parse(rendered)
        except SyntaxError:
            return False
        return len(tree.body) == 1 and isinstance(tree.body[0], ast.FunctionDef)

    def _candidates(
        self,
        fn: FunctionNode,
        prelude: str,
        description_override: str | None = None,
        child_nodes: tuple[FunctionNode, ...] | None = None,
        want: int | None = None,
    ) -> CandidateSet:
        """Sample, post-process, and admit implementations for one function."""

        if self.backend is None:
            raise SynthesisFailed("no backend to sample implementations from")
        role = self.target.role("implementation")
        prompt = llm.build_implementation_prompt(
            fn,
            self.program.header,
            self.target,
            child_nodes=self._child_nodes(fn) if child_nodes is None else child_nodes,
            child_impls=llm.truncate_prelude(prelude, self.options.prompt_prefix_cap),
            description_override=description_override,
        )
        want = self.options.n_implementations if want is None else want
        implementations: list[str] = []
        sample_indices: list[int] = []
        seen = 0
        for round_ in range(3):
            ask = want if round_ == 0 else seen + (want - len(implementations))
            request = GenerationRequest(
                prompt=prompt,
                n=ask,
                temperature=role.temperature,
                max_tokens=role.max_tokens,
                stop=self.target.stop,
                logit_bias_tags=role.logit_bias_tags,
                presence_penalty=role.presence_penalty,
            )
            try:
                completions = llm.generate(request, self.backend, self.cache)
            except FixtureMissing:
                if round_ == 0:
                    raise
                break  # topping up rejects is best-effort under fixture backends
            for idx in range(seen, len(completions)):
                body = completions[idx]
                first = next((ln for ln in body.split("\n") if ln.strip()), "")
                if not first or not first[0].isspace():
                    continue
                rendered = llm.render_function(
                    fn.name or "",
                    fn.args,
                    fn.description if description_override is None else "",
                    body,
                    self.target,
                )
                if not self._admissible(rendered):
                    continue
                implementations.append(rendered)
                sample_indices.append(idx)
            seen = len(completions)
            if len(implementations) >= want or len(completions) < ask:
                break
        return CandidateSet(
            function=fn.name or "",
            implementations=implementations[:want],
            sample_indices=sample_indices[:want],
        )

    # ---------------- evaluation ----------------

    def _evaluate(self, record: dict, source: str, asserts: Sequence[str]):
        if self.executor is None:
            raise SynthesisFailed(
                f"target {self.target.name!r} has no executor to check constraints"
            )
        if self.evaluations_used >= self.options.eval_budget:
            raise BudgetExhausted(
                f"evaluation budget of {self.options.eval_budget} exhausted",
                tuple(record["members"]),
            )
        self._eval_counter += 1
        request = EvalRequest(
            eval_id=f"s{record['scc']}-e{self._eval_counter}",
            program_source=source,
            assert_lines=tuple(asserts),
            timeout_seconds=self.options.timeout_per_eval,
        )
        outcome = self.executor.run_batch([request])[0]
        self.evaluations_used += 1
        record["evaluations"] += 1
        return outcome

    def _search_stream(self, sizes: Sequence[int], cap: int) -> Iterator[tuple[int, ...]]:
        total = prod(sizes) if sizes else 0
        if total == 0 or cap <= 0:
            return iter(())
        if self.options.search_order == "sequential":
            return (_unrank(r, sizes) for r in range(min(total, cap)))

        def stream() -> Iterator[tuple[int, ...]]:
            # Greedy probe: each function's first candidate together, then
            # the uniform walk over the rest of the product.
            greedy = tuple(0 for _ in sizes)
            yield greedy
            yielded = 1
            index_sets = [range(size) for size in sizes]
            for combo in enumerate_combinations(index_sets, cap, self.rng):
                if combo == greedy:
                    continue
                yield combo
                yielded += 1
                if yielded >= cap:
                    return

        return stream()

    # ---------------- component solving ----------------

    def _scc_text(self, sets: list[CandidateSet], combo: Sequence[int]) -> str:
        return "\n\n".join(sets[i].implementations[combo[i]] for i in range(len(sets)))

    def _record_for(self, plan: SccPlan) -> dict:
        for record in self.records:
            if record["scc"] == plan.index:
                return record
        record = {
            "scc": plan.index,
            "members": list(plan.members),
            "evaluations": 0,
            "chosen": {},
            "autofill": [],
            "autodecomp": [],
            "backtracked": False,
        }
        self.records.append(record)
        return record

    def _solve(self, plan: SccPlan) -> None:
        record = self._record_for(plan)
        members = [self.node_by_name[name] for name in plan.members]
        extra_prelude: list[str] = []
        prelude = self._prelude(plan)
        sets = [self._candidates(fn, prelude) for fn in members]

        autofill_left = (
            self.options.autofill_depth_limit if self.options.allow_autofill else 0
        )
        autodecomp_left = (
            self.options.autodecomp_rounds if self.options.allow_autodecomp else 0
        )
        dead_names: set[str] = set()

        while True:
            result = self._try_combinations(
                plan, members, sets, prelude, record, dead_names
            )
            if result == "solved":
                return
            if isinstance(result, tuple):
                _, name, usage = result
                if name in self.node_by_name:
                    if self._adopt_existing(name, extra_prelude, record):
                        prelude = self._prelude(plan, extra_prelude)
                        continue
                elif autofill_left > 0 and self._attempt_autofill(
                    members, sets, prelude, name, usage, record
                ):
                    autofill_left -= 1
                    continue
                dead_names.add(name)
                continue
            # search space exhausted
            if autodecomp_left > 0 and self._attempt_autodecomp(
                members, sets, prelude, record
            ):
                autodecomp_left -= 1
                continue
            plan.state = SccState.FAILED
            raise _NoSolution(plan.index)

    def _try_combinations(
        self,
        plan: SccPlan,
        members: list[FunctionNode],
        sets: list[CandidateSet],
        prelude: str,
        record: dict,
        dead_names: set[str],
    ):
        """Walk the product until something passes.

        Returns "solved", "exhausted", or ("undefined", name, usage_line) when
        a run hit a name worth resolving out of band.
        """

        if any(len(s) == 0 for s in sets):
            return "exhausted"

        asserts: list[str] = []
        for fn in members:
            asserts.extend(translate_constraints(fn, self.target).lines)

        generated: list[str] = []
        if not asserts:
            root = next((fn for fn in members if fn.parent is None), None)
            if (
                root is not None
                and self.options.allow_test_generation
                and self.backend is not None
            ):
                generated = generate_tests(
                    root,
                    self.backend,
                    self.cache,
                    self.target,
                    self.options.generated_test_samples,
                ).lines

        if not asserts and not generated:
            # Nothing to check: take the greedy combination, running it once
            # if this target executes at all.
            combo = tuple(0 for _ in sets)
            text = self._scc_text(sets, combo)
            if self.executor is not None and not self.target.implicit_constraints:
                source = (prelude + "\n\n" + text) if prelude else text
                outcome = self._evaluate(record, source, [])
                if not outcome.passed:
                    return "exhausted"
            self._accept(plan, sets, combo, record)
            return "solved"

        if generated:
            return self._solve_by_agreement(plan, sets, prelude, generated, record)

        sizes = [len(s) for s in sets]
        total = prod(sizes)
        cap = self.options.eval_budget - self.evaluations_used
        combos_seen = 0
        for combo in self._search_stream(sizes, cap):
            text = self._scc_text(sets, combo)
            source = (prelude + "\n\n" + text) if prelude else text
            outcome = self._evaluate(record, source, asserts)
            combos_seen += 1
            if outcome.passed:
                self._accept(plan, sets, combo, record)
                return "solved"
            if outcome.status == UNDEFINED_NAME:
                name = outcome.detail.get("name", "")
                if name and name not in dead_names:
                    return ("undefined", name, outcome.detail.get("usage_line", ""))
        if combos_seen < total:
            raise BudgetExhausted(
                f"evaluation budget of {self.options.eval_budget} exhausted",
                plan.members,
            )
        return "exhausted"

    def _solve_by_agreement(
        self,
        plan: SccPlan,
        sets: list[CandidateSet],
        prelude: str,
        generated: list[str],
        record: dict,
    ):
        """Pick the combination whose generated-test pass set is largest and
        most agreed upon."""

        sizes = [len(s) for s in sets]
        per_combo = max(1, len(generated))
        remaining = self.options.eval_budget - self.evaluations_used
        combos = list(self._search_stream(sizes, remaining // per_combo))
        if not combos:
            if prod(sizes) > 0 and remaining < per_combo:
                raise BudgetExhausted(
                    f"evaluation budget of {self.options.eval_budget} exhausted",
                    plan.members,
                )
            return "exhausted"
        pass_sets: list[frozenset[int]] = []
        for combo in combos:
            text = self._scc_text(sets, combo)
            source = (prelude + "\n\n" + text) if prelude else text
            passed = set()
            for t_i, line in enumerate(generated):
                if self._evaluate(record, source, [line]).passed:
                    passed.add(t_i)
            pass_sets.append(frozenset(passed))
        best = codet_rank(pass_sets)[0]
        if not pass_sets[best]:
            return "exhausted"
        record["generated_tests"] = len(generated)
        self._accept(plan, sets, combos[best], record)
        return "solved"

    def _accept(
        self, plan: SccPlan, sets: list[CandidateSet], combo: Sequence[int],
        record: dict,
    ) -> None:
        plan.solution = self._scc_text(sets, combo)
        plan.state = SccState.SOLVED
        record["chosen"] = {
            sets[i].function: sets[i].sample_indices[combo[i]]
            for i in range(len(sets))
        }

    # ---------------- recovery paths ----------------

    def _solved_text_of(self, name: str) -> str | None:
        for plan in self.plans:
            if name in plan.members and plan.solution:
                return plan.solution
        return None

    def _adopt_existing(self, name: str, extra_prelude: list[str], record: dict) -> bool:
        """An undefined name that is an already-solved program function just
        gets included in this component's world."""

        text = self._solved_text_of(name)
        if text is None or text in extra_prelude:
            return False
        extra_prelude.append(text)
        record["autofill"].append({"name": name, "adopted": True})
        log.info("widened scope of component %s to include %s", record["scc"], name)
        return True

    def _attempt_autofill(
        self,
        members: list[FunctionNode],
        sets: list[CandidateSet],
        prelude: str,
        name: str,
        usage_line: str,
        record: dict,
    ) -> bool:
        """Create a constraint-less helper for an undefined name and give it
        its own candidate dimension."""

        args = _args_from_usage(name, usage_line)
        caller = _find_caller(members, sets, usage_line) or members[0]
        node = FunctionNode(
            name=name,
            args=args,
            description="",
            indent_level=caller.indent_level + 1,
            parent=caller,
        )
        caller.children.append(node)
        self.node_by_name[name] = node
        new_set = self._candidates(
            node, prelude, description_override=usage_line, child_nodes=()
        )
        if len(new_set) == 0:
            caller.children.remove(node)
            del self.node_by_name[name]
            return False
        members.append(node)
        sets.append(new_set)
        record["autofill"].append(
            {"name": name, "usage": usage_line, "caller": caller.name}
        )
        log.info("autofill: added %s(%s) under %s", name, ", ".join(args), caller.name)
        return True

    def _attempt_autodecomp(
        self,
        members: list[FunctionNode],
        sets: list[CandidateSet],
        prelude: str,
        record: dict,
    ) -> bool:
        """Ask the backend to split the hardest member into helpers, then
        rebuild that member's candidates with the helpers in scope."""

        if self.backend is None:
            return False
        fn = next((m for m in members if m.constraints), members[0])
        role = self.target.role("translation")
        request = GenerationRequest(
            prompt=llm.build_decomposition_prompt(fn, self.program.header, self.target),
            n=1,
            temperature=role.temperature,
            max_tokens=role.max_tokens,
            logit_bias_tags=role.logit_bias_tags,
            presence_penalty=role.presence_penalty,
        )
        try:
            completions = llm.generate(request, self.backend, self.cache)
        except FixtureMissing:
            return False
        new_nodes: list[FunctionNode] = []
        for name, args, rets, desc in llm.parse_decomposition(completions[0]):
            if name in self.node_by_name:
                log.warning("decomposition child %r already exists; skipped", name)
                continue
            node = FunctionNode(
                name=name,
                args=args,
                rets=rets,
                description=desc,
                indent_level=fn.indent_level + 1,
                parent=fn,
            )
            fn.children.append(node)
            self.node_by_name[name] = node
            new_nodes.append(node)
        if not new_nodes:
            return False
        sets[members.index(fn)] = self._candidates(fn, prelude)
        for node in new_nodes:
            members.append(node)
            sets.append(self._candidates(node, prelude))
        record["autodecomp"].append(
            {"function": fn.name, "children": [n.name for n in new_nodes]}
        )
        return not any(len(s) == 0 for s in sets)

    # ---------------- backtracking ----------------

    def _alternative_solutions(
        self, plan: SccPlan, used_texts: set[str], extend: bool
    ) -> Iterator[tuple[str, dict]]:
        """Other passing combinations for an already-solved component.

        Yields (text, chosen) pairs; the caller owns plan.solution."""

        members = [self.node_by_name[name] for name in plan.members]
        record = self._record_for(plan)
        prelude = self._prelude(plan)
        want = self.options.n_implementations * 2 if extend else None
        try:
            sets = [self._candidates(fn, prelude, want=want) for fn in members]
        except FixtureMissing:
            if not extend:
                raise
            sets = [self._candidates(fn, prelude) for fn in members]
        asserts: list[str] = []
        for fn in members:
            asserts.extend(translate_constraints(fn, self.target).lines)
        sizes = [len(s) for s in sets]
        cap = self.options.eval_budget - self.evaluations_used
        for combo in self._search_stream(sizes, cap):
            text = self._scc_text(sets, combo)
            if text in used_texts:
                continue
            source = (prelude + "\n\n" + text) if prelude else text
            if self._evaluate(record, source, asserts).passed:
                chosen = {
                    sets[i].function: sets[i].sample_indices[combo[i]]
                    for i in range(len(sets))
                }
                yield text, chosen

    def _backtrack(self, failed: SccPlan) -> bool:
        """Re-open solved dependencies and retry the failed component against
        their alternative solutions."""

        deps = [
            self.plans[i]
            for i in sorted(
                failed.dependencies, key=lambda i: -self.order.index(self.plans[i])
            )
            if self.plans[i].solution is not None
        ]
        record = self._record_for(failed)
        for round_ in range(self.options.backtrack_rounds):
            for dep in deps:
                dep_record = self._record_for(dep)
                original = dep.solution
                original_chosen = dict(dep_record["chosen"])
                used = {original or ""}
                for text, chosen in self._alternative_solutions(
                    dep, used, extend=round_ > 0
                ):
                    used.add(text)
                    dep.solution = text
                    dep_record["chosen"] = chosen
                    try:
                        self._solve(failed)
                    except _NoSolution:
                        continue
                    record["backtracked"] = True
                    dep_record["backtracked"] = True
                    return True
                dep.solution = original
                dep_record["chosen"] = original_chosen
        return False

    # ---------------- top level ----------------

    def run(self) -> SynthesizedProgram:
        self._register_nodes()
        graph = build_test_dependency_graph(
            self.program, implicit_constraints=self.target.implicit_constraints
        )
        self.plans = strongly_connected_components(graph)
        self.order = synthesis_order(self.plans)

        for plan in self.order:
            try:
                self._solve(plan)
            except _NoSolution:
                if self.options.backtrack_rounds > 0 and self._backtrack(plan):
                    continue
                raise SynthesisFailed(
                    f"no combination satisfied component {plan.members}",
                    plan.members,
                ) from None

        assembled_functions = "\n\n".join(p.solution or "" for p in self.order)
        assert_lines: list[str] = []
        for node in self.program.functions():
            assert_lines.extend(translate_constraints(node, self.target).lines)
        assembled = assembled_functions
        if assert_lines:
            assembled += "\n\n" + "\n".join(assert_lines)
        assembled += "\n"

        verification = "skipped"
        if self.executor is not None and assert_lines:
            # A final whole-program check, outside the budget: searching was
            # done per component, this confirms the assembly as one unit.
            request = EvalRequest(
                eval_id="verify",
                program_source=assembled_functions,
                assert_lines=tuple(assert_lines),
                timeout_seconds=max(
                    5.0, self.options.timeout_per_eval * (1 + len(assert_lines))
                ),
            )
            outcome = self.executor.run_batch([request])[0]
            if not outcome.passed:
                raise SynthesisFailed(
                    "assembled program failed verification: "
                    f"{outcome.status} {outcome.detail}"
                )
            verification = "pass"

        chosen: dict[str, int] = {}
        for record in self.records:
            chosen.update(record["chosen"])

        manifest = {
            "options": asdict(self.options),
            "target": self.target.name,
            "backend": getattr(self.backend, "id", None),
            "order": [list(p.members) for p in self.order],
            "sccs": self.records,
            "evaluations_used": self.evaluations_used,
            "verification": verification,
        }
        return SynthesizedProgram(
            assembled_source=assembled,
            chosen=chosen,
            evaluations_used=self.evaluations_used,
            provenance=self.records,
            manifest=manifest,
        )


def _args_from_usage(name: str, usage_line: str) -> list[str]:
    """Parameter names for an undefined function, from how it was called."""

    idx = usage_line.find(name + "(")
    if idx < 0:
        return []
    open_paren = idx + len(name)
    depth = 0
    close = -1
    for i in range(open_paren, len(usage_line)):
        ch = usage_line[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                close = i
                break
    if close < 0:
        return []
    inner = usage_line[open_paren + 1 : close]
    if not inner.strip():
        return []
    args = []
    for i, expr in enumerate(split_top_level(inner, ",")):
        expr = expr.strip()
        if expr.isidentifier() and expr not in args:
            args.append(expr)
        else:
            args.append(f"arg{i}")
    return args


def _find_caller(
    members: list[FunctionNode], sets: list[CandidateSet], usage_line: str
) -> FunctionNode | None:
    if not usage_line:
        return None
    for fn, cset in zip(members, sets):
        for text in cset.implementations:
            if usage_line in text:
                return fn
    return None


def synthesize(
    program: SketchProgram,
    target: TargetConfig,
    backend: llm.Backend | None,
    cache: CompletionCache,
    executor: Executor | None,
    options: SynthOptions | None = None,
) -> SynthesizedProgram:
    """Solve every component and assemble the full program.

    Deterministic: the same source, fixtures, and options (seed included)
    produce the same output, byte for byte.
    """

    return _Synthesis(
        program, target, backend, cache, executor, options or SynthOptions()
    ).run()
