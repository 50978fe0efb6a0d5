"""The weaver command line: synth, eval, backtranslate."""

import json
from pathlib import Path

import pytest

from fixture_tools import seed_program
from weaver.cli import _histogram, main
from weaver.parser import parse_program
from weaver.target import load_target

TARGET = load_target("python")
BT_CORPUS = Path(__file__).parent / "data" / "bt_corpus"


def seed_sketch(tmp_path, name, text, bodies, correct):
    sketch_path = tmp_path / f"{name}.ss"
    sketch_path.write_text(text)
    seed_program(tmp_path / "fixtures", parse_program(text), TARGET, bodies, correct)
    return sketch_path


def common_args(tmp_path):
    return [
        "--fixtures",
        str(tmp_path / "fixtures"),
        "--cache",
        str(tmp_path / "cache"),
        "--timeout",
        "5",
    ]


@pytest.fixture
def plus_one(tmp_path):
    return seed_sketch(
        tmp_path,
        "plus_one",
        "plus_one(x): Adds one to x\n1 -> 2\n",
        {"plus_one": ["\n    return x - 1", "\n    return x + 1"]},
        {"plus_one": 1},
    )


# --- synth ---


def test_synth_writes_outputs(tmp_path, plus_one, capsys):
    code = main(
        ["synth", str(plus_one), "--n-impls", "2", "--search-order", "sequential"]
        + common_args(tmp_path)
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "component 0 (plus_one): 2 evaluations" in out
    assert "total evaluations: 2" in out

    source = plus_one.with_suffix(".out.py").read_text()
    assert "def plus_one(x):" in source
    assert source.endswith("assert plus_one(1) == 2\n")
    manifest = json.loads(plus_one.with_suffix(".manifest.json").read_text())
    assert manifest["evaluations_used"] == 2
    assert manifest["verification"] == "pass"


def test_synth_dump_graph(tmp_path, plus_one, capsys):
    code = main(["synth", str(plus_one), "--dump-graph"] + common_args(tmp_path))
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("digraph")
    assert not plus_one.with_suffix(".out.py").exists()


def test_synth_replay_identical(tmp_path, plus_one, capsys):
    args = ["synth", str(plus_one), "--n-impls", "2"] + common_args(tmp_path)
    assert main(args) == 0
    manifest_path = plus_one.with_suffix(".manifest.json")
    capsys.readouterr()

    assert main(args + ["--replay", str(manifest_path)]) == 0
    assert "replay: identical" in capsys.readouterr().out


def test_synth_replay_mismatch(tmp_path, plus_one, capsys):
    args = ["synth", str(plus_one), "--n-impls", "2"] + common_args(tmp_path)
    assert main(args) == 0
    manifest_path = plus_one.with_suffix(".manifest.json")
    tampered = json.loads(manifest_path.read_text())
    tampered["evaluations_used"] += 1
    replay_path = tmp_path / "tampered.json"
    replay_path.write_text(json.dumps(tampered))
    capsys.readouterr()

    assert main(args + ["--replay", str(replay_path)]) == 1
    assert "replay: MISMATCH" in capsys.readouterr().out


def test_synth_missing_sketch_is_usage_error(tmp_path, capsys):
    code = main(["synth", str(tmp_path / "absent.ss")] + common_args(tmp_path))
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_synth_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.ss"
    bad.write_text("just a description with no signature\n")
    code = main(["synth", str(bad)] + common_args(tmp_path))
    assert code == 2
    assert "parse error:" in capsys.readouterr().err


def test_synth_mock_backend_requires_fixtures(tmp_path, plus_one, capsys):
    code = main(["synth", str(plus_one), "--cache", str(tmp_path / "cache")])
    assert code == 2
    assert "--fixtures" in capsys.readouterr().err


def test_synth_http_backend_requires_endpoint(tmp_path, plus_one, capsys, monkeypatch):
    monkeypatch.delenv("WEAVER_BASE_URL", raising=False)
    monkeypatch.delenv("WEAVER_MODEL", raising=False)
    code = main(
        ["synth", str(plus_one), "--backend", "http", "--cache", str(tmp_path / "c")]
    )
    assert code == 2


def test_synth_failure_exit_code(tmp_path, capsys):
    sketch = seed_sketch(
        tmp_path,
        "wrong",
        "wrong(x): Adds one to x\n1 -> 2\n",
        {"wrong": ["\n    return x - 1", "\n    return 0"]},
        {"wrong": 0},
    )
    code = main(["synth", str(sketch), "--n-impls", "2"] + common_args(tmp_path))
    assert code == 1
    assert "synthesis failed:" in capsys.readouterr().err


# --- eval ---


def eval_corpus(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    right = "\n    return x + 1"
    layouts = {
        "p1": ([right, "\n    return x - 1", "\n    return 0"], 0),
        "p2": (["\n    return x - 1", "\n    return 0", right], 2),
        "p3": (["\n    return x - 1", "\n    return 0", right], 2),
        "p4": (["\n    return x - 1", "\n    return 0", "\n    return x * 5"], 0),
        "p5": (["\n    return x - 1", "\n    return 0", "\n    return x * 5"], 0),
    }
    for name, (bodies, correct) in layouts.items():
        text = f"{name}_fn(x): Increment for problem {name}\n1 -> 2\n"
        (corpus / f"{name}.ss").write_text(text)
        seed_program(
            tmp_path / "fixtures",
            parse_program(text),
            TARGET,
            {f"{name}_fn": bodies},
            {f"{name}_fn": correct},
        )
    return corpus


def test_eval_reports_pass_rate(tmp_path, capsys):
    corpus = eval_corpus(tmp_path)
    report_path = tmp_path / "report.json"
    code = main(
        [
            "eval",
            str(corpus),
            "--n-impls",
            "3",
            "--n-programs",
            "2",
            "--search-order",
            "sequential",
            "--jobs",
            "2",
            "--budget-sweep",
            "1,3,100",
            "--report",
            str(report_path),
        ]
        + common_args(tmp_path)
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "budget 1: 1/5 solved" in out
    assert "budget 3: 3/5 solved" in out
    assert "budget 100: 3/5 solved" in out
    assert "p1: solved (p1.ss seed 0, 1 evaluations)" in out
    assert "p4: unsolved" in out
    assert "evaluations used: 0-9: 3" in out
    assert "effective programs per problem: 6" in out
    assert "pass@6: 3/5 problems" in out

    report = json.loads(report_path.read_text())
    assert report["solved"] == 3
    assert report["total"] == 5
    assert report["pass_rate"] == 0.6
    assert report["effective_programs"] == 6
    assert report["n_programs"] == 2
    assert report["n_implementations"] == 3
    assert report["budget_sweep"] == {"1": 1, "3": 3, "100": 3}
    assert report["problems"]["p2"] == {
        "solved": True,
        "evaluations": 3,
        "via": "p2.ss seed 0",
    }
    assert report["problems"]["p5"]["solved"] is False


def test_eval_empty_corpus(tmp_path, capsys):
    (tmp_path / "corpus").mkdir()
    code = main(["eval", str(tmp_path / "corpus")] + common_args(tmp_path))
    assert code == 2


def test_eval_bad_budget_sweep(tmp_path, capsys):
    corpus = eval_corpus(tmp_path)
    code = main(
        ["eval", str(corpus), "--budget-sweep", "a,b"] + common_args(tmp_path)
    )
    assert code == 2
    assert "budget-sweep" in capsys.readouterr().err


# --- backtranslate ---


def test_backtranslate_cli(tmp_path, capsys):
    from test_backtranslate import seed_corpus_descriptions

    seed_corpus_descriptions(tmp_path / "fixtures")
    out_dir = tmp_path / "sketches"
    code = main(
        ["backtranslate", str(BT_CORPUS), str(out_dir)] + common_args(tmp_path)[:4]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "backtranslated 2/6 programs" in out
    assert "bt2: skipped (all bodies shorter than 5 lines)" in out
    assert (out_dir / "bt0.ss").exists()
    assert (out_dir / "bt4.ss").exists()


# --- histogram helper ---


def test_histogram_buckets():
    assert _histogram([]) == "(no solved problems)"
    assert _histogram([1, 5, 9]) == "0-9: 3"
    assert _histogram([3, 42, 17, 300]) == "0-9: 1  10-99: 2  100-999: 1"
