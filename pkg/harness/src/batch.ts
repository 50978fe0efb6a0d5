import { runCandidate } from "./runner.js";
import { HarnessCrash } from "./types.js";
import type { EvalOutcome, EvalRequest } from "./types.js";

/**
 * Evaluate every request, at most `parallelism` worker processes at a time.
 *
 * Results always come back in request order. Workers pull the next pending
 * index as they free up, so one slow evaluation occupies one slot while
 * everything else keeps flowing.
 */
export async function runBatch(
  requests: EvalRequest[],
  parallelism = 1,
): Promise<EvalOutcome[]> {
  if (!Number.isInteger(parallelism) || parallelism < 1) {
    throw new HarnessCrash(`parallelism must be a positive integer, got ${parallelism}`);
  }
  const seen = new Set<string>();
  for (const request of requests) {
    if (seen.has(request.evalId)) {
      throw new HarnessCrash(`duplicate eval_id ${request.evalId} in batch`);
    }
    seen.add(request.evalId);
  }
  if (requests.length === 0) {
    return [];
  }

  const results: EvalOutcome[] = new Array(requests.length);
  let next = 0;
  const worker = async () => {
    while (next < requests.length) {
      const index = next;
      next += 1;
      results[index] = await runCandidate(requests[index]);
    }
  };
  const width = Math.min(parallelism, requests.length);
  await Promise.all(Array.from({ length: width }, worker));
  return results;
}
