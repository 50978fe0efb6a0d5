"""Candidate evaluation.

Evaluating a candidate program means executing its source, then each
translated assert line, in a fresh interpreter, and classifying what
happened. Three interchangeable executors are provided:

* LocalPythonExecutor  - spawns ``python -I`` per evaluation (the default);
* TableExecutor        - a stub that answers from a declared truth table,
                         for tests that need thousands of cheap evaluations;
* HarnessClient        - shells out to an external harness binary speaking
                         the line-delimited JSON wire protocol documented in
                         the README.

Only ever feed these model-generated or otherwise untrusted code inside a
sandbox you are comfortable losing.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .errors import HarnessCrash

PASS = "pass"
ASSERT_FAIL = "assert_fail"
RUNTIME_ERROR = "runtime_error"
UNDEFINED_NAME = "undefined_name"
TIMEOUT = "timeout"

STATUSES = (PASS, ASSERT_FAIL, RUNTIME_ERROR, UNDEFINED_NAME, TIMEOUT)

# Wall-clock slack allowed on top of a request's own timeout before the
# parent kills the worker process outright. The fine-grained timeout is
# enforced inside the worker; this only catches workers stuck in C code.
KILL_GRACE = 5.0


@dataclass(frozen=True)
class EvalRequest:
    eval_id: str
    program_source: str
    assert_lines: tuple[str, ...] = ()
    timeout_seconds: float = 1.0


@dataclass
class EvalOutcome:
    eval_id: str
    status: str
    detail: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return self.status == PASS


def request_to_wire(request: EvalRequest) -> str:
    return json.dumps(
        {
            "eval_id": request.eval_id,
            "program_source": request.program_source,
            "assert_lines": list(request.assert_lines),
            "timeout_seconds": request.timeout_seconds,
        },
        ensure_ascii=False,
    )


def outcome_from_wire(line: str) -> EvalOutcome:
    data = json.loads(line)
    status = data["status"]
    if status not in STATUSES:
        raise HarnessCrash(f"unknown outcome status {status!r}")
    return EvalOutcome(
        eval_id=data["eval_id"],
        status=status,
        detail=dict(data.get("detail", {})),
        wall_time=float(data.get("wall_time", 0.0)),
    )


def _check_ids(requests: Sequence[EvalRequest]) -> None:
    seen = set()
    for request in requests:
        if request.eval_id in seen:
            raise ValueError(f"duplicate eval_id {request.eval_id!r} in batch")
        seen.add(request.eval_id)


class Executor(Protocol):
    def run_batch(
        self, requests: Sequence[EvalRequest], parallelism: int = 1
    ) -> list[EvalOutcome]:
        """Evaluate every request; results come back in request order."""


# The per-evaluation worker. Runs under ``python -I -c`` with the payload on
# stdin and the result file path as argv[1]; writing the result to a file
# keeps candidate prints from corrupting the protocol. The payload timeout is
# enforced in-process with an interval timer so that tiny limits (0.04 s) are
# meaningful despite interpreter start-up costs.
_RUNNER = r"""
import io, json, re, signal, sys, time, traceback

class _Timeout(Exception):
    pass

def _alarm(signum, frame):
    raise _Timeout()

def _usage_from(exc, source, asserts):
    frames = traceback.extract_tb(exc.__traceback__)
    for fr in reversed(frames):
        if fr.filename == "<candidate>":
            lines = source.split("\n")
            if 1 <= fr.lineno <= len(lines):
                return lines[fr.lineno - 1].strip()
        m = re.match(r"<assert:(\d+)>", fr.filename)
        if m:
            return asserts[int(m.group(1))].strip()
    return ""

def _deepest_is_assert(exc):
    frames = traceback.extract_tb(exc.__traceback__)
    return bool(frames) and frames[-1].filename.startswith("<assert:")

def main():
    result_path = sys.argv[1]
    payload = json.load(sys.stdin)
    source = payload["program_source"]
    asserts = payload["assert_lines"]
    timeout = float(payload.get("timeout_seconds") or 0)
    out = {"status": "pass", "detail": {}}
    ns = {"__name__": "__candidate__"}
    real_streams = sys.stdout, sys.stderr
    sys.stdout = io.StringIO()
    sys.stderr = io.StringIO()
    signal.signal(signal.SIGALRM, _alarm)
    started = time.perf_counter()
    try:
        if timeout > 0:
            signal.setitimer(signal.ITIMER_REAL, timeout)
        try:
            exec(compile(source, "<candidate>", "exec"), ns)
            for i, line in enumerate(asserts):
                exec(compile(line, "<assert:%d>" % i, "exec"), ns)
        except _Timeout:
            out = {"status": "timeout", "detail": {}}
        except AssertionError as exc:
            if _deepest_is_assert(exc):
                frames = traceback.extract_tb(exc.__traceback__)
                idx = int(frames[-1].filename[len("<assert:"):-1])
                out = {"status": "assert_fail", "detail": {"line_index": idx}}
            else:
                out = {"status": "runtime_error",
                       "detail": {"kind": "AssertionError", "message": str(exc)[:500]}}
        except NameError as exc:
            m = re.search(r"name '([^']*)' is not defined", str(exc))
            out = {"status": "undefined_name",
                   "detail": {"name": m.group(1) if m else "",
                              "usage_line": _usage_from(exc, source, asserts)}}
        except BaseException as exc:
            out = {"status": "runtime_error",
                   "detail": {"kind": type(exc).__name__, "message": str(exc)[:500]}}
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        sys.stdout, sys.stderr = real_streams
    out["wall_time"] = time.perf_counter() - started
    with open(result_path, "w") as fh:
        json.dump(out, fh)

main()
"""


class LocalPythonExecutor:
    """Fresh isolated interpreter per evaluation."""

    def __init__(self, python: str | None = None):
        self.python = python or sys.executable

    def _run_one(self, request: EvalRequest) -> EvalOutcome:
        payload = json.dumps(
            {
                "program_source": request.program_source,
                "assert_lines": list(request.assert_lines),
                "timeout_seconds": request.timeout_seconds,
            }
        )
        started = time.perf_counter()
        with tempfile.TemporaryDirectory(prefix="weval-") as tmp:
            result_path = Path(tmp) / "result.json"
            proc = subprocess.Popen(
                [self.python, "-I", "-c", _RUNNER, str(result_path)],
                stdin=subprocess.PIPE,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.PIPE,
                text=True,
            )
            try:
                _, stderr = proc.communicate(
                    payload, timeout=request.timeout_seconds + KILL_GRACE
                )
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
                return EvalOutcome(
                    eval_id=request.eval_id,
                    status=TIMEOUT,
                    detail={"killed": True},
                    wall_time=time.perf_counter() - started,
                )
            wall = time.perf_counter() - started
            if result_path.exists():
                try:
                    data = json.loads(result_path.read_text())
                except json.JSONDecodeError:
                    data = None
                if data is not None:
                    return EvalOutcome(
                        eval_id=request.eval_id,
                        status=data["status"],
                        detail=data.get("detail", {}),
                        wall_time=float(data.get("wall_time", wall)),
                    )
            return EvalOutcome(
                eval_id=request.eval_id,
                status=RUNTIME_ERROR,
                detail={"kind": "worker_crash", "message": (stderr or "")[-500:]},
                wall_time=wall,
            )

    def run_batch(
        self, requests: Sequence[EvalRequest], parallelism: int = 1
    ) -> list[EvalOutcome]:
        _check_ids(requests)
        if parallelism <= 1:
            return [self._run_one(r) for r in requests]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(self._run_one, requests))


class TableExecutor:
    """Answers evaluations from a declared rule instead of running code."""

    def __init__(self, rule: Callable[[EvalRequest], EvalOutcome | str]):
        self.rule = rule
        self.calls = 0

    @classmethod
    def from_marker_rule(cls, required: dict[str, str]) -> "TableExecutor":
        """Pass iff, for every function defined in the source, the declared
        marker string for it appears somewhere in the source."""

        def rule(request: EvalRequest) -> str:
            for fn_name, marker in required.items():
                if f"def {fn_name}(" in request.program_source:
                    if marker not in request.program_source:
                        return ASSERT_FAIL
            return PASS

        return cls(rule)

    @classmethod
    def from_hash_table(
        cls, table: dict[str, str], default: str = ASSERT_FAIL
    ) -> "TableExecutor":
        """Outcomes keyed by sha256 of (program_source + asserts)."""

        def rule(request: EvalRequest) -> str:
            digest = hashlib.sha256(
                (request.program_source + "\n".join(request.assert_lines)).encode()
            ).hexdigest()
            return table.get(digest, default)

        return cls(rule)

    def run_batch(
        self, requests: Sequence[EvalRequest], parallelism: int = 1
    ) -> list[EvalOutcome]:
        _check_ids(requests)
        out = []
        for request in requests:
            self.calls += 1
            verdict = self.rule(request)
            if isinstance(verdict, EvalOutcome):
                out.append(verdict)
            else:
                detail = {"line_index": 0} if verdict == ASSERT_FAIL else {}
                out.append(
                    EvalOutcome(eval_id=request.eval_id, status=verdict, detail=detail)
                )
        return out


class HarnessClient:
    """Runs batches through an external harness command.

    The harness receives ``<command> run --timeout <s> --parallelism <n>
    <batch-file>`` where the batch file holds one JSON request per line, and
    must reply with one JSON outcome per line on stdout, in request order.
    """

    def __init__(self, command: Sequence[str]):
        self.command = list(command)

    def run_batch(
        self, requests: Sequence[EvalRequest], parallelism: int = 1
    ) -> list[EvalOutcome]:
        _check_ids(requests)
        if not requests:
            return []
        timeout = max(r.timeout_seconds for r in requests)
        with tempfile.TemporaryDirectory(prefix="wbatch-") as tmp:
            batch_path = Path(tmp) / "batch.jsonl"
            batch_path.write_text(
                "".join(request_to_wire(r) + "\n" for r in requests)
            )
            argv = self.command + [
                "run",
                "--timeout",
                str(timeout),
                "--parallelism",
                str(parallelism),
                str(batch_path),
            ]
            try:
                proc = subprocess.run(
                    argv,
                    capture_output=True,
                    text=True,
                    timeout=(timeout + KILL_GRACE) * len(requests) + 30,
                )
            except (subprocess.TimeoutExpired, OSError) as exc:
                raise HarnessCrash(f"harness did not finish: {exc}") from exc
        if proc.returncode != 0:
            raise HarnessCrash(
                f"harness exited {proc.returncode}: {proc.stderr[-500:]}"
            )
        lines = [line for line in proc.stdout.splitlines() if line.strip()]
        try:
            outcomes = [outcome_from_wire(line) for line in lines]
        except (json.JSONDecodeError, KeyError) as exc:
            raise HarnessCrash(f"malformed harness reply: {exc}") from exc
        by_id = {o.eval_id: o for o in outcomes}
        missing = [r.eval_id for r in requests if r.eval_id not in by_id]
        if missing:
            raise HarnessCrash(f"harness replies missing eval ids: {missing[:5]}")
        return [by_id[r.eval_id] for r in requests]


def make_requests(
    sources_and_asserts: Iterable[tuple[str, Sequence[str]]],
    timeout_seconds: float,
    prefix: str = "eval",
) -> list[EvalRequest]:
    """Convenience wrapper assigning sequential eval ids."""

    return [
        EvalRequest(
            eval_id=f"{prefix}-{i}",
            program_source=source,
            assert_lines=tuple(asserts),
            timeout_seconds=timeout_seconds,
        )
        for i, (source, asserts) in enumerate(sources_and_asserts)
    ]
