import { z } from "zod";

export type EvalStatus =
  | "pass"
  | "assert_fail"
  | "runtime_error"
  | "undefined_name"
  | "timeout";

export interface EvalRequest {
  evalId: string;
  programSource: string;
  assertLines: string[];
  timeoutSeconds: number;
}

export interface EvalOutcome {
  evalId: string;
  status: EvalStatus;
  /** Structured context: line_index, kind/message, name/usage_line, killed. */
  detail: Record<string, unknown>;
  wallTime: number;
}

/** Raised on malformed wire input; distinct from any candidate failure. */
export class HarnessCrash extends Error {}

const wireRequest = z.object({
  eval_id: z.string().min(1),
  program_source: z.string(),
  assert_lines: z.array(z.string()).default([]),
  timeout_seconds: z.number().positive().optional(),
});

/**
 * Parse one JSONL batch line. `defaultTimeout` fills in requests that do
 * not carry their own timeout_seconds.
 */
export function parseWireRequest(line: string, defaultTimeout: number): EvalRequest {
  let data: unknown;
  try {
    data = JSON.parse(line);
  } catch {
    throw new HarnessCrash(`batch line is not JSON: ${line.slice(0, 80)}`);
  }
  const parsed = wireRequest.safeParse(data);
  if (!parsed.success) {
    throw new HarnessCrash(`bad batch line: ${parsed.error.issues[0]?.message}`);
  }
  return {
    evalId: parsed.data.eval_id,
    programSource: parsed.data.program_source,
    assertLines: parsed.data.assert_lines,
    timeoutSeconds: parsed.data.timeout_seconds ?? defaultTimeout,
  };
}

export function toWireOutcome(outcome: EvalOutcome): string {
  return JSON.stringify({
    eval_id: outcome.evalId,
    status: outcome.status,
    detail: outcome.detail,
    wall_time: outcome.wallTime,
  });
}
