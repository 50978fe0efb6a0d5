export { runBatch } from "./batch.js";
export { runCandidate } from "./runner.js";
export { extractCallGraph, ParseError } from "./extract.js";
export type { CallEdge, ExtractedCallGraph, ExtractedFunction } from "./extract.js";
export { HarnessCrash, parseWireRequest, toWireOutcome } from "./types.js";
export type { EvalOutcome, EvalRequest, EvalStatus } from "./types.js";
