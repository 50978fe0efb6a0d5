"""Component-wise synthesis: sampling, search, recovery paths, bookkeeping."""

import random

import pytest

from fixture_tools import (
    FixtureDir,
    implementation_prompt,
    role_request,
    seed_autofill,
    seed_decomposition,
    seed_generated_tests,
    seed_program,
)
from weaver import llm
from weaver.errors import BudgetExhausted, FixtureMissing, SynthesisFailed
from weaver.executor import (
    ASSERT_FAIL,
    PASS,
    EvalRequest,
    LocalPythonExecutor,
    TableExecutor,
)
from weaver.llm import CompletionCache, MockBackend
from weaver.parser import FunctionNode, parse_program
from weaver.synth import (
    SynthOptions,
    _args_from_usage,
    direct_sampling_success,
    enumerate_combinations,
    synthesize,
)
from weaver.target import load_target

TARGET = load_target("python")


# --- closed-form success chance ---


def test_direct_sampling_success_frozen_values():
    assert direct_sampling_success(1, 4) == 1.0
    assert direct_sampling_success(2, 4) == 0.68359375
    assert direct_sampling_success(3, 4) == 0.2275238037109375
    assert direct_sampling_success(5, 4) == pytest.approx(0.015533685451373458)
    assert direct_sampling_success(8, 4) == pytest.approx(0.00024411827416769005)
    assert direct_sampling_success(3, 2) == 0.4375


def test_direct_sampling_success_decreases_with_depth():
    values = [direct_sampling_success(m, 4) for m in range(1, 10)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(v < 1.0 for v in values[1:])


# --- combination enumeration ---


def combos(sizes, budget, seed=0):
    sets = [range(size) for size in sizes]
    return list(enumerate_combinations(sets, budget, random.Random(seed)))


def test_enumerate_covers_whole_product_once():
    got = combos([2, 3], budget=100)
    assert sorted(got) == [(i, j) for i in range(2) for j in range(3)]
    assert len(got) == len(set(got)) == 6


def test_enumerate_respects_budget():
    got = combos([4, 4, 4], budget=10)
    assert len(got) == len(set(got)) == 10
    for combo in got:
        assert all(0 <= i < 4 for i in combo)


def test_enumerate_empty_cases():
    assert combos([], budget=5) == []
    assert combos([3, 0], budget=5) == []
    assert combos([3], budget=0) == []


def test_enumerate_deterministic_per_seed():
    assert combos([5, 5], 12, seed=9) == combos([5, 5], 12, seed=9)
    assert combos([5, 5], 25, seed=1) != combos([5, 5], 25, seed=2)


def test_enumerate_uniform_first_draw():
    # every cell of a 4x4 product should be hit about equally often when one
    # combination is drawn per seed; chi-square with df=15 at p=0.001 is 37.697
    counts = {}
    for seed in range(10000):
        (combo,) = combos([4, 4], budget=1, seed=seed)
        counts[combo] = counts.get(combo, 0) + 1
    assert len(counts) == 16
    expected = 10000 / 16
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    assert chi2 < 37.697


def test_args_from_usage():
    assert _args_from_usage(
        "count_neighbors", "if count_neighbors(array, row, column) == 3:"
    ) == ["array", "row", "column"]
    assert _args_from_usage("f", "return f(a + b, c)") == ["arg0", "c"]
    assert _args_from_usage("f", "return f(x, x)") == ["x", "arg1"]
    assert _args_from_usage("f", "return f()") == []
    assert _args_from_usage("f", "no call here") == []


# --- shared scenario plumbing ---

PAIR_SKETCH = (
    "pair_root(x): Combines its helper's work\n"
    "0 -> 0\n"
    "    pair_helper(x): Does half the work\n"
    "        pair_root\n"
)


def pair_bodies(correct_index):
    bodies = {"pair_root": [], "pair_helper": []}
    for i in range(4):
        root_tag = "pr-ok" if i == correct_index else f"pr-bad-{i}"
        helper_tag = "ph-ok" if i == correct_index else f"ph-bad-{i}"
        bodies["pair_root"].append(f"\n    return '{root_tag}'")
        bodies["pair_helper"].append(f"\n    return '{helper_tag}'")
    return bodies


class RecordingTable(TableExecutor):
    """Marker-rule table that also remembers every eval id it served."""

    def __init__(self, required):
        inner = TableExecutor.from_marker_rule(required)
        super().__init__(inner.rule)
        self.eval_ids = []

    def run_batch(self, requests, parallelism=1):
        self.eval_ids.extend(r.eval_id for r in requests)
        return super().run_batch(requests, parallelism)


def run_pair(tmp_path, correct_index, **option_overrides):
    program = parse_program(PAIR_SKETCH)
    seed_program(
        tmp_path / "fixtures",
        program,
        TARGET,
        pair_bodies(correct_index),
        {"pair_root": correct_index, "pair_helper": correct_index},
    )
    options = SynthOptions(n_implementations=4, timeout_per_eval=5.0)
    for key, value in option_overrides.items():
        setattr(options, key, value)
    executor = RecordingTable({"pair_root": "pr-ok", "pair_helper": "ph-ok"})
    result = None
    error = None
    try:
        result = synthesize(
            parse_program(PAIR_SKETCH),
            TARGET,
            MockBackend(tmp_path / "fixtures"),
            CompletionCache(tmp_path / "cache"),
            executor,
            options,
        )
    except SynthesisFailed as exc:
        error = exc
    return result, executor, error


# --- search order and eval accounting ---


def test_sequential_walks_lexicographically(tmp_path):
    # correct pair is the last of the 4x4 product, so rank 15 needs 16 evals
    result, executor, _ = run_pair(tmp_path, 3, search_order="sequential")
    assert result.evaluations_used == 16
    assert executor.calls == 17  # the final whole-program check is extra
    assert executor.eval_ids[:2] == ["s0-e1", "s0-e2"]
    assert executor.eval_ids[-1] == "verify"
    assert result.chosen == {"pair_root": 3, "pair_helper": 3}
    assert result.manifest["verification"] == "pass"


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_greedy_probe_finds_first_combination_immediately(tmp_path, seed):
    result, executor, _ = run_pair(tmp_path, 0, rng_seed=seed)
    assert result.evaluations_used == 1
    assert result.chosen == {"pair_root": 0, "pair_helper": 0}


def test_budget_exhausted_counts_every_evaluation(tmp_path):
    _, executor, error = run_pair(tmp_path, 3, search_order="sequential", eval_budget=5)
    assert isinstance(error, BudgetExhausted)
    assert executor.calls == 5


def test_budget_checked_before_first_evaluation(tmp_path):
    _, executor, error = run_pair(tmp_path, 3, eval_budget=0)
    assert isinstance(error, BudgetExhausted)
    assert executor.calls == 0


def test_true_exhaustion_is_not_budget_exhaustion(tmp_path):
    program = parse_program(PAIR_SKETCH)
    bodies = pair_bodies(0)
    bodies["pair_root"] = [b.replace("pr-ok", "pr-bad-x") for b in bodies["pair_root"]]
    seed_program(tmp_path / "fixtures", program, TARGET, bodies, {
        "pair_root": 0, "pair_helper": 0,
    })
    executor = RecordingTable({"pair_root": "pr-ok", "pair_helper": "ph-ok"})
    with pytest.raises(SynthesisFailed) as err:
        synthesize(
            parse_program(PAIR_SKETCH),
            TARGET,
            MockBackend(tmp_path / "fixtures"),
            CompletionCache(tmp_path / "cache"),
            executor,
            SynthOptions(n_implementations=4, timeout_per_eval=5.0),
        )
    assert not isinstance(err.value, BudgetExhausted)
    assert executor.calls == 16


def test_same_inputs_reproduce_identical_output(tmp_path):
    first, _, _ = run_pair(tmp_path, 2, rng_seed=11)
    second, _, _ = run_pair(tmp_path, 2, rng_seed=11)
    assert first.assembled_source == second.assembled_source
    assert first.manifest == second.manifest


def test_manifest_shape(tmp_path):
    result, _, _ = run_pair(tmp_path, 0)
    manifest = result.manifest
    assert manifest["target"] == "python"
    assert manifest["backend"] == "mock"
    assert manifest["order"] == [["pair_root", "pair_helper"]]
    assert manifest["evaluations_used"] == result.evaluations_used
    assert manifest["options"]["n_implementations"] == 4
    record = manifest["sccs"][0]
    assert record["members"] == ["pair_root", "pair_helper"]
    assert record["evaluations"] == result.evaluations_used


def test_missing_fixture_propagates(tmp_path):
    (tmp_path / "fixtures").mkdir()
    with pytest.raises(FixtureMissing):
        synthesize(
            parse_program(PAIR_SKETCH),
            TARGET,
            MockBackend(tmp_path / "fixtures"),
            CompletionCache(tmp_path / "cache"),
            TableExecutor(lambda request: PASS),
            SynthOptions(n_implementations=4),
        )


def test_no_executor_with_constraints_fails(tmp_path):
    program = parse_program(PAIR_SKETCH)
    seed_program(tmp_path / "fixtures", program, TARGET, pair_bodies(0), {
        "pair_root": 0, "pair_helper": 0,
    })
    with pytest.raises(SynthesisFailed):
        synthesize(
            parse_program(PAIR_SKETCH),
            TARGET,
            MockBackend(tmp_path / "fixtures"),
            CompletionCache(tmp_path / "cache"),
            None,
            SynthOptions(n_implementations=4),
        )


# --- candidate admission ---


def test_inadmissible_candidates_are_dropped(tmp_path):
    text = "p(x): Adds one to x\n1 -> 2\n"
    program = parse_program(text)
    bodies = {"p": ["return x + 1", "\n    return x +", "\n    return x + 1"]}
    seed_program(tmp_path / "fixtures", program, TARGET, bodies, {"p": 2})
    result = synthesize(
        parse_program(text),
        TARGET,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        LocalPythonExecutor(),
        SynthOptions(n_implementations=3, timeout_per_eval=5.0),
    )
    # only the well-formed body survived; chosen reports its sample index
    assert result.chosen == {"p": 2}
    assert result.evaluations_used == 1


def test_lean_target_accepts_non_python_candidates(tmp_path):
    lean = load_target("lean")
    text = "add_zero(n): Adding zero on the right changes nothing\n"
    program = parse_program(text)
    node = program.find("add_zero")
    prompt = llm.build_implementation_prompt(node, None, lean)
    FixtureDir(tmp_path / "fixtures").put(
        role_request(prompt, 1, lean), ["\n  exact rfl"]
    )
    result = synthesize(
        program,
        lean,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        None,
        SynthOptions(n_implementations=1),
    )
    assert "theorem add_zero n :=\n  exact rfl" in result.assembled_source
    assert result.evaluations_used == 0


# --- constraint-less components ---


def test_constraintless_component_accepts_greedy(tmp_path):
    text = "inc(x): Adds one to x\n"
    program = parse_program(text)
    bodies = {"inc": ["\n    return x + 1", "\n    return x * 3"]}
    seed_program(tmp_path / "fixtures", program, TARGET, bodies, {"inc": 0})
    result = synthesize(
        parse_program(text),
        TARGET,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        LocalPythonExecutor(),
        SynthOptions(n_implementations=2, timeout_per_eval=5.0),
    )
    assert result.chosen == {"inc": 0}
    assert result.evaluations_used == 1  # one smoke run, no asserts
    assert result.manifest["verification"] == "skipped"


def test_constraintless_component_without_executor(tmp_path):
    text = "inc(x): Adds one to x\n"
    program = parse_program(text)
    bodies = {"inc": ["\n    return x + 1"]}
    seed_program(tmp_path / "fixtures", program, TARGET, bodies, {"inc": 0})
    result = synthesize(
        parse_program(text),
        TARGET,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        None,
        SynthOptions(n_implementations=1),
    )
    assert result.evaluations_used == 0
    assert "def inc(x):" in result.assembled_source


# --- generated tests and agreement ranking ---


def seed_agreement_scenario(tmp_path):
    text = "inc(x): Adds one to x\n"
    program = parse_program(text)
    bodies = {"inc": ["\n    return x + 1", "\n    return x * 3"]}
    seed_program(tmp_path / "fixtures", program, TARGET, bodies, {"inc": 0})
    seed_generated_tests(
        tmp_path / "fixtures",
        TARGET,
        program.find("inc"),
        [
            "assert inc(1) == 2\nassert inc(0) == 1",
            "```\nassert inc(1) == 2\nassert inc(2) == 3\n```",
        ],
    )
    return text


def test_generated_tests_break_constraintless_ties(tmp_path):
    text = seed_agreement_scenario(tmp_path)
    result = synthesize(
        parse_program(text),
        TARGET,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        LocalPythonExecutor(),
        SynthOptions(
            n_implementations=2,
            timeout_per_eval=5.0,
            allow_test_generation=True,
            generated_test_samples=2,
        ),
    )
    assert result.chosen == {"inc": 0}
    # two candidates, each judged against the three pooled asserts
    assert result.evaluations_used == 6
    assert result.provenance[0]["generated_tests"] == 3
    assert result.manifest["verification"] == "skipped"


def test_generated_tests_respect_budget(tmp_path):
    text = seed_agreement_scenario(tmp_path)
    with pytest.raises(BudgetExhausted):
        synthesize(
            parse_program(text),
            TARGET,
            MockBackend(tmp_path / "fixtures"),
            CompletionCache(tmp_path / "cache"),
            LocalPythonExecutor(),
            SynthOptions(
                n_implementations=2,
                timeout_per_eval=5.0,
                allow_test_generation=True,
                generated_test_samples=2,
                eval_budget=2,
            ),
        )


# --- autofill ---


def seed_autofill_scenario(tmp_path):
    text = "p(x): Doubles x using a helper\n1 -> 2\n"
    program = parse_program(text)
    seed_program(
        tmp_path / "fixtures",
        program,
        TARGET,
        {"p": ["\n    return helper_double(x)"]},
        {"p": 0},
    )
    seed_autofill(
        tmp_path / "fixtures",
        program,
        TARGET,
        name="helper_double",
        args=["x"],
        usage_line="return helper_double(x)",
        prelude="",
        bodies=["\n    return x * 2"],
        caller=program.find("p"),
    )
    return text


def run_autofill(tmp_path, allow):
    return synthesize(
        parse_program(seed_autofill_scenario(tmp_path)),
        TARGET,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        LocalPythonExecutor(),
        SynthOptions(
            n_implementations=1, timeout_per_eval=5.0, allow_autofill=allow
        ),
    )


def test_autofill_invents_missing_helper(tmp_path):
    result = run_autofill(tmp_path, allow=True)
    assert result.evaluations_used == 2
    assert "def helper_double(x):" in result.assembled_source
    record = result.provenance[0]
    assert record["autofill"] == [
        {
            "name": "helper_double",
            "usage": "return helper_double(x)",
            "caller": "p",
        }
    ]
    assert result.chosen["helper_double"] == 0


def test_autofill_disabled_fails(tmp_path):
    with pytest.raises(SynthesisFailed):
        run_autofill(tmp_path, allow=False)


def test_adoption_widens_component_scope(tmp_path):
    text = (
        "h(x): Returns x unchanged\n"
        "1 -> 1\n"
        "r(x): Relays to h without declaring it\n"
        "2 -> 2\n"
    )
    program = parse_program(text)
    seed_program(
        tmp_path / "fixtures",
        program,
        TARGET,
        {"h": ["\n    return x"], "r": ["\n    return h(x)"]},
        {"h": 0, "r": 0},
    )
    result = synthesize(
        parse_program(text),
        TARGET,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        LocalPythonExecutor(),
        SynthOptions(n_implementations=1, timeout_per_eval=5.0),
    )
    assert result.evaluations_used == 3  # h, r failing, r with h in scope
    r_record = next(rec for rec in result.provenance if rec["members"] == ["r"])
    assert r_record["autofill"] == [{"name": "h", "adopted": True}]


# --- autodecomp ---


def seed_autodecomp_scenario(tmp_path):
    text = "calc(x): Doubles x and then adds one\n1 -> 3\n"
    pristine = parse_program(text)
    seed_program(
        tmp_path / "fixtures", pristine, TARGET,
        {"calc": ["\n    return 0"]}, {"calc": 0},
    )
    seed_decomposition(
        tmp_path / "fixtures",
        pristine,
        TARGET,
        pristine.find("calc"),
        "double(x): multiply x by two\nadd_one(x): add one to x",
    )
    # after decomposition the parent is re-prompted with the new children in
    # scope, and each child gets its own implementation request
    grown = parse_program(text)
    calc = grown.find("calc")
    double = FunctionNode(name="double", args=["x"], description="multiply x by two")
    add_one = FunctionNode(name="add_one", args=["x"], description="add one to x")
    calc.children.extend([double, add_one])
    by_name = {"calc": calc, "double": double, "add_one": add_one}
    fixtures = FixtureDir(tmp_path / "fixtures")
    fixtures.put(
        role_request(implementation_prompt(grown, calc, by_name, "", TARGET), 1, TARGET),
        ["\n    return add_one(double(x))"],
    )
    fixtures.put(
        role_request(implementation_prompt(grown, double, by_name, "", TARGET), 1, TARGET),
        ["\n    return x * 2"],
    )
    fixtures.put(
        role_request(implementation_prompt(grown, add_one, by_name, "", TARGET), 1, TARGET),
        ["\n    return x + 1"],
    )
    return text


def run_autodecomp(tmp_path, allow):
    return synthesize(
        parse_program(seed_autodecomp_scenario(tmp_path)),
        TARGET,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        LocalPythonExecutor(),
        SynthOptions(
            n_implementations=1, timeout_per_eval=5.0, allow_autodecomp=allow
        ),
    )


def test_autodecomp_splits_exhausted_function(tmp_path):
    result = run_autodecomp(tmp_path, allow=True)
    assert result.evaluations_used == 2
    record = result.provenance[0]
    assert record["autodecomp"] == [
        {"function": "calc", "children": ["double", "add_one"]}
    ]
    assert "def double(x):" in result.assembled_source
    assert "def add_one(x):" in result.assembled_source


def test_autodecomp_disabled_fails(tmp_path):
    with pytest.raises(SynthesisFailed):
        run_autodecomp(tmp_path, allow=False)


# --- backtracking ---


def seed_backtrack_scenario(tmp_path):
    text = (
        "helper(x) -> y: Keeps the magnitude of x\n"
        "2 -> 2\n"
        "p(x): Passes x through helper\n"
        "-1 -> -1\n"
        "    helper\n"
    )
    program = parse_program(text)
    helper_bodies = ["\n    return abs(x)", "\n    return x"]
    p_bodies = ["\n    return helper(x)", "\n    return helper(x) * 1"]
    seed_program(
        tmp_path / "fixtures",
        program,
        TARGET,
        {"helper": helper_bodies, "p": p_bodies},
        {"helper": 0, "p": 0},
    )
    # once backtracking swaps the helper, p is re-prompted with the
    # alternative solution as its prelude
    by_name = {node.name: node for node in program.functions()}
    alt_prelude = llm.render_function(
        "helper", ["x"], "Keeps the magnitude of x", "\n    return x", TARGET
    )
    FixtureDir(tmp_path / "fixtures").put(
        role_request(
            implementation_prompt(program, program.find("p"), by_name, alt_prelude, TARGET),
            2,
            TARGET,
        ),
        p_bodies,
    )
    return text


def test_backtracking_swaps_dependency_solution(tmp_path):
    text = seed_backtrack_scenario(tmp_path)
    result = synthesize(
        parse_program(text),
        TARGET,
        MockBackend(tmp_path / "fixtures"),
        CompletionCache(tmp_path / "cache"),
        LocalPythonExecutor(),
        SynthOptions(n_implementations=2, timeout_per_eval=5.0),
    )
    assert result.chosen == {"helper": 1, "p": 0}
    assert result.evaluations_used == 5
    helper_record = next(r for r in result.provenance if r["members"] == ["helper"])
    p_record = next(r for r in result.provenance if r["members"] == ["p"])
    assert helper_record["backtracked"] is True
    assert p_record["backtracked"] is True
    assert "return abs(x)" not in result.assembled_source


def test_backtracking_disabled_fails(tmp_path):
    text = seed_backtrack_scenario(tmp_path)
    with pytest.raises(SynthesisFailed):
        synthesize(
            parse_program(text),
            TARGET,
            MockBackend(tmp_path / "fixtures"),
            CompletionCache(tmp_path / "cache"),
            LocalPythonExecutor(),
            SynthOptions(
                n_implementations=2, timeout_per_eval=5.0, backtrack_rounds=0
            ),
        )
