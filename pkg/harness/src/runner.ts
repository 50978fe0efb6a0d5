import { spawn } from "node:child_process";
import { mkdtemp, readFile, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import path from "node:path";
import type { EvalOutcome, EvalRequest, EvalStatus } from "./types.js";

/**
 * Seconds on top of a request's own timeout before the parent process sends
 * SIGKILL. The request timeout itself is enforced inside the worker with an
 * interval timer; the hard kill only catches workers stuck below the
 * interpreter (C loops, blocked syscalls). Keeping the grace short means a
 * runaway worker is gone well inside the documented 0.5 s kill allowance.
 */
const KILL_GRACE_SECONDS = 0.25;

const STATUSES: ReadonlySet<string> = new Set([
  "pass",
  "assert_fail",
  "runtime_error",
  "undefined_name",
  "timeout",
]);

/**
 * The per-evaluation worker, run under `python3 -I -c` with the payload on
 * stdin and a result-file path as argv[1]. Results travel through the file so
 * that candidate prints can never corrupt them. The alarm exception derives
 * from BaseException so a candidate's blanket `except Exception` cannot
 * swallow the timeout.
 */
const RUNNER_SOURCE = String.raw`
import io, json, re, signal, sys, time, traceback

class Expired(BaseException):
    pass

def main():
    result_path = sys.argv[1]
    payload = json.load(sys.stdin)
    source = payload["program_source"]
    asserts = payload.get("assert_lines") or []
    limit = float(payload.get("timeout_seconds") or 0)

    def expired(signum, frame):
        raise Expired()

    def usage_line(exc):
        for fr in reversed(traceback.extract_tb(exc.__traceback__)):
            if fr.filename == "<candidate>":
                lines = source.split("\n")
                if 1 <= fr.lineno <= len(lines):
                    return lines[fr.lineno - 1].strip()
            if fr.filename.startswith("<assert:"):
                return asserts[int(fr.filename[8:-1])].strip()
        return ""

    result = {"status": "pass", "detail": {}}
    scope = {"__name__": "__candidate__"}
    saved = sys.stdout, sys.stderr
    sys.stdout = io.StringIO()
    sys.stderr = io.StringIO()
    signal.signal(signal.SIGALRM, expired)
    started = time.perf_counter()
    try:
        if limit > 0:
            signal.setitimer(signal.ITIMER_REAL, limit)
        try:
            exec(compile(source, "<candidate>", "exec"), scope)
            for index, line in enumerate(asserts):
                exec(compile(line, "<assert:%d>" % index, "exec"), scope)
        except Expired:
            result = {"status": "timeout", "detail": {}}
        except AssertionError as exc:
            frames = traceback.extract_tb(exc.__traceback__)
            if frames and frames[-1].filename.startswith("<assert:"):
                index = int(frames[-1].filename[8:-1])
                result = {"status": "assert_fail", "detail": {"line_index": index}}
            else:
                result = {"status": "runtime_error",
                          "detail": {"kind": "AssertionError",
                                     "message": str(exc)[:500]}}
        except NameError as exc:
            hit = re.search(r"name '([^']*)'", str(exc))
            result = {"status": "undefined_name",
                      "detail": {"name": hit.group(1) if hit else "",
                                 "usage_line": usage_line(exc)}}
        except BaseException as exc:
            result = {"status": "runtime_error",
                      "detail": {"kind": type(exc).__name__,
                                 "message": str(exc)[:500]}}
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        sys.stdout, sys.stderr = saved
    result["wall_time"] = time.perf_counter() - started
    with open(result_path, "w") as out:
        json.dump(result, out)

main()
`;

/**
 * Evaluate one candidate program in a fresh isolated interpreter.
 *
 * Classification happens inside the worker; this side only supplies the
 * payload, enforces the hard kill, and reads the result file back. A worker
 * that dies without writing a result (and was not killed by us) reports as a
 * runtime_error of kind "worker_crash".
 */
export async function runCandidate(request: EvalRequest): Promise<EvalOutcome> {
  const workDir = await mkdtemp(path.join(tmpdir(), "weval-"));
  const resultPath = path.join(workDir, "result.json");
  const started = performance.now();
  try {
    const child = spawn("python3", ["-I", "-c", RUNNER_SOURCE, resultPath], {
      stdio: ["pipe", "ignore", "pipe"],
    });
    let stderrTail = "";
    child.stderr.on("data", (chunk: Buffer) => {
      stderrTail = (stderrTail + chunk.toString()).slice(-500);
    });
    child.stdin.on("error", () => {
      // EPIPE when the worker dies before reading; the close path reports it.
    });
    child.stdin.end(
      JSON.stringify({
        program_source: request.programSource,
        assert_lines: request.assertLines,
        timeout_seconds: request.timeoutSeconds,
      }),
    );

    let killed = false;
    const killTimer = setTimeout(
      () => {
        killed = true;
        child.kill("SIGKILL");
      },
      (request.timeoutSeconds + KILL_GRACE_SECONDS) * 1000,
    );
    const spawnFailure = await new Promise<string | null>((resolve) => {
      child.once("error", (err) => resolve(String(err)));
      child.once("close", () => resolve(null));
    });
    clearTimeout(killTimer);
    const wall = (performance.now() - started) / 1000;

    if (killed) {
      return {
        evalId: request.evalId,
        status: "timeout",
        detail: { killed: true },
        wallTime: wall,
      };
    }
    if (spawnFailure === null) {
      const fromWorker = await readResult(resultPath);
      if (fromWorker !== null) {
        return {
          evalId: request.evalId,
          status: fromWorker.status,
          detail: fromWorker.detail,
          wallTime: fromWorker.wallTime ?? wall,
        };
      }
    }
    return {
      evalId: request.evalId,
      status: "runtime_error",
      detail: { kind: "worker_crash", message: spawnFailure ?? stderrTail },
      wallTime: wall,
    };
  } finally {
    await rm(workDir, { recursive: true, force: true });
  }
}

interface WorkerResult {
  status: EvalStatus;
  detail: Record<string, unknown>;
  wallTime: number | null;
}

async function readResult(resultPath: string): Promise<WorkerResult | null> {
  let raw: string;
  try {
    raw = await readFile(resultPath, "utf8");
  } catch {
    return null;
  }
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) {
    return null;
  }
  const record = data as Record<string, unknown>;
  if (typeof record.status !== "string" || !STATUSES.has(record.status)) {
    return null;
  }
  const detail =
    typeof record.detail === "object" && record.detail !== null
      ? (record.detail as Record<string, unknown>)
      : {};
  return {
    status: record.status as EvalStatus,
    detail,
    wallTime: typeof record.wall_time === "number" ? record.wall_time : null,
  };
}
