"""Command line entry points: synth, eval, backtranslate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .backtranslate import run_corpus
from .errors import ParseError, SynthesisFailed, WeaverError
from .executor import HarnessClient, LocalPythonExecutor
from .graph import build_test_dependency_graph, strongly_connected_components, to_dot
from .llm import Backend, CompletionCache, HttpBackend, MockBackend
from .parser import parse_program
from .synth import SynthOptions, synthesize
from .target import TargetConfig, load_target

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _add_backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", default="python",
                   help="target name or path to a target config (default: python)")
    p.add_argument("--backend", choices=("http", "mock"), default="mock")
    p.add_argument("--fixtures", help="fixture directory for the mock backend")
    p.add_argument("--base-url", default=os.environ.get("WEAVER_BASE_URL"),
                   help="completions endpoint for the http backend")
    p.add_argument("--model", default=os.environ.get("WEAVER_MODEL"))
    p.add_argument("--api-key", default=os.environ.get("WEAVER_API_KEY", ""))
    p.add_argument("--cache", default=str(Path.home() / ".cache" / "weaver"),
                   help="completion cache directory")
    p.add_argument("--harness",
                   help="external eval harness command, e.g. 'harness' or 'node dist/cli.js'")


def _add_synth_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-impls", type=int, default=16,
                   help="implementations sampled per function (default: 16)")
    p.add_argument("--eval-budget", type=int, default=100_000)
    p.add_argument("--timeout", type=float, default=0.04,
                   help="seconds per candidate evaluation (default: 0.04)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--search-order", choices=("shuffled", "sequential"),
                   default="shuffled")
    p.add_argument("--prefix-cap", type=int, default=6000,
                   help="prompt prefix budget in characters")
    p.add_argument("--allow-autofill", action="store_true",
                   help="invent helpers for undefined names hit at run time")
    p.add_argument("--autofill-depth", type=int, default=2)
    p.add_argument("--allow-autodecomp", action="store_true",
                   help="ask the backend to split functions whose search fails")
    p.add_argument("--autodecomp-rounds", type=int, default=1)
    p.add_argument("--backtrack-rounds", type=int, default=1)
    p.add_argument("--allow-test-generation", action="store_true",
                   help="rank untested top-level components by generated tests")
    p.add_argument("--test-samples", type=int, default=100)
    p.add_argument("--strict", action="store_true",
                   help="treat duplicate definitions and redundant references as errors")


def _build_backend(args: argparse.Namespace) -> Backend:
    if args.backend == "mock":
        if not args.fixtures:
            raise UsageError("--backend mock requires --fixtures")
        return MockBackend(args.fixtures)
    if not args.base_url or not args.model:
        raise UsageError("--backend http requires --base-url and --model")
    return HttpBackend(args.base_url, args.model, api_key=args.api_key)


def _build_executor(args: argparse.Namespace, target: TargetConfig):
    if getattr(args, "harness", None):
        return HarnessClient(shlex.split(args.harness))
    if target.executor == "local":
        return LocalPythonExecutor()
    return None


def _options(args: argparse.Namespace) -> SynthOptions:
    return SynthOptions(
        n_implementations=args.n_impls,
        eval_budget=args.eval_budget,
        timeout_per_eval=args.timeout,
        allow_autofill=args.allow_autofill,
        autofill_depth_limit=args.autofill_depth,
        allow_autodecomp=args.allow_autodecomp,
        autodecomp_rounds=args.autodecomp_rounds,
        backtrack_rounds=args.backtrack_rounds,
        rng_seed=args.seed,
        search_order=args.search_order,
        prompt_prefix_cap=args.prefix_cap,
        allow_test_generation=args.allow_test_generation,
        generated_test_samples=args.test_samples,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    sketch_path = Path(args.sketch)
    if not sketch_path.exists():
        raise UsageError(f"no such sketch: {sketch_path}")
    program = parse_program(sketch_path.read_text(), strict=args.strict)
    for warning in program.warnings:
        log.warning("%s", warning)
    target = load_target(args.target)

    if args.dump_graph:
        graph = build_test_dependency_graph(
            program, implicit_constraints=target.implicit_constraints
        )
        print(to_dot(graph, strongly_connected_components(graph)))
        return 0

    options = _options(args)
    expected = None
    if args.replay:
        expected = json.loads(Path(args.replay).read_text())
        options = SynthOptions(**expected["options"])

    result = synthesize(
        program,
        target,
        _build_backend(args),
        CompletionCache(args.cache),
        _build_executor(args, target),
        options,
    )

    out_path = sketch_path.with_suffix(".out.py")
    manifest_path = sketch_path.with_suffix(".manifest.json")
    out_path.write_text(result.assembled_source)
    manifest_path.write_text(json.dumps(result.manifest, indent=2) + "\n")
    for record in result.provenance:
        print(
            f"component {record['scc']} ({', '.join(record['members'])}): "
            f"{record['evaluations']} evaluations"
        )
    print(f"total evaluations: {result.evaluations_used}")
    print(f"wrote {out_path} and {manifest_path}")

    if expected is not None:
        same = (
            expected["sccs"] == result.manifest["sccs"]
            and expected["evaluations_used"] == result.manifest["evaluations_used"]
        )
        print("replay: identical" if same else "replay: MISMATCH")
        if not same:
            return 1
    return 0


def _histogram(counts: list[int]) -> str:
    """Order-of-magnitude buckets, e.g. ``0-9: 2  10-99: 1``."""

    if not counts:
        return "(no solved problems)"
    buckets: dict[int, int] = {}
    for count in counts:
        width = 1
        while count >= width * 10:
            width *= 10
        buckets[width] = buckets.get(width, 0) + 1
    parts = []
    for width in sorted(buckets):
        label = "0-9" if width == 1 else f"{width}-{width * 10 - 1}"
        parts.append(f"{label}: {buckets[width]}")
    return "  ".join(parts)


def cmd_eval(args: argparse.Namespace) -> int:
    corpus = Path(args.corpus)
    files = sorted(corpus.glob("*.ss"))
    if not files:
        raise UsageError(f"no .ss sketches under {corpus}")
    target = load_target(args.target)
    backend = _build_backend(args)
    cache = CompletionCache(args.cache)
    executor = _build_executor(args, target)
    base = _options(args)

    problems: dict[str, list[Path]] = {}
    for path in files:
        problems.setdefault(path.name.split(".")[0], []).append(path)
    items = sorted(problems.items())

    def solve_problem(
        item: tuple[str, list[Path]], options_base: SynthOptions
    ) -> tuple[str, bool, int, str]:
        name, variants = item
        evals = 0
        for path in variants:
            for attempt in range(args.n_programs):
                options = replace(
                    options_base, rng_seed=options_base.rng_seed + attempt
                )
                try:
                    program = parse_program(path.read_text())
                    result = synthesize(
                        program, target, backend, cache, executor, options
                    )
                except (SynthesisFailed, WeaverError, ParseError) as exc:
                    log.info("%s attempt %d failed: %s", path.name, attempt, exc)
                    continue
                evals += result.evaluations_used
                return name, True, evals, f"{path.name} seed {options.rng_seed}"
        return name, False, evals, ""

    def run_all(options_base: SynthOptions) -> list[tuple[str, bool, int, str]]:
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                return list(
                    pool.map(lambda item: solve_problem(item, options_base), items)
                )
        return [solve_problem(item, options_base) for item in items]

    sweep: dict[int, int] = {}
    if args.budget_sweep:
        try:
            budgets = sorted(
                {int(tok) for tok in args.budget_sweep.split(",") if tok.strip()}
            )
        except ValueError:
            raise UsageError("--budget-sweep takes comma-separated integers")
        if not budgets:
            raise UsageError("--budget-sweep takes comma-separated integers")
        for budget in budgets:
            solved_at = sum(
                1 for _, ok, _, _ in run_all(replace(base, eval_budget=budget)) if ok
            )
            sweep[budget] = solved_at
            print(f"budget {budget}: {solved_at}/{len(items)} solved")

    outcomes = run_all(base)
    solved = 0
    eval_counts: list[int] = []
    report_problems: dict[str, dict] = {}
    for name, ok, evals, how in outcomes:
        if ok:
            solved += 1
            eval_counts.append(evals)
            print(f"{name}: solved ({how}, {evals} evaluations)")
        else:
            print(f"{name}: unsolved")
        report_problems[name] = {"solved": ok, "evaluations": evals, "via": how}
    effective = args.n_programs * args.n_impls
    print(f"evaluations used: {_histogram(eval_counts)}")
    print(f"effective programs per problem: {effective}")
    print(f"pass@{effective}: {solved}/{len(items)} problems")

    if args.report:
        report = {
            "problems": report_problems,
            "solved": solved,
            "total": len(items),
            "pass_rate": solved / len(items),
            "effective_programs": effective,
            "n_programs": args.n_programs,
            "n_implementations": args.n_impls,
            "budget_sweep": {str(b): s for b, s in sweep.items()},
        }
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    return 0


def cmd_backtranslate(args: argparse.Namespace) -> int:
    target = load_target(args.target)
    results = run_corpus(
        args.src_dir,
        args.out_dir,
        _build_backend(args),
        CompletionCache(args.cache),
        target,
    )
    written = 0
    for r in results:
        if r.status == "written":
            written += 1
            print(f"{r.name}: wrote {r.sketch_path}")
        else:
            print(f"{r.name}: skipped ({r.detail})")
    print(f"backtranslated {written}/{len(results)} programs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weaver",
        description="Synthesize programs from hierarchical natural-language sketches.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthesize one sketch")
    p_synth.add_argument("sketch", help="path to a .ss sketch file")
    p_synth.add_argument("--dump-graph", action="store_true",
                         help="print the test-dependency graph as DOT and exit")
    p_synth.add_argument("--replay",
                         help="re-run with the options of an earlier manifest and compare")
    _add_backend_args(p_synth)
    _add_synth_args(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_eval = sub.add_parser("eval", help="synthesize a corpus and report pass rates")
    p_eval.add_argument("corpus", help="directory of .ss sketches; variants share a stem")
    p_eval.add_argument("--n-programs", type=int, default=1,
                        help="synthesis attempts per sketch (seeds seed..seed+n-1)")
    p_eval.add_argument("--jobs", type=int, default=1,
                        help="problems to evaluate in parallel")
    p_eval.add_argument("--budget-sweep",
                        help="comma-separated eval budgets; prints pass rate per budget")
    p_eval.add_argument("--report", help="write a JSON evaluation report to this path")
    _add_backend_args(p_eval)
    _add_synth_args(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bt = sub.add_parser("backtranslate",
                          help="turn .src programs (+ .tests) into .ss sketches")
    p_bt.add_argument("src_dir")
    p_bt.add_argument("out_dir")
    _add_backend_args(p_bt)
    p_bt.set_defaults(func=cmd_backtranslate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    except SynthesisFailed as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return 1
    except WeaverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
