#!/usr/bin/env node
import { readFile } from "node:fs/promises";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { runBatch } from "./batch.js";
import { extractCallGraph, ParseError } from "./extract.js";
import { parseWireRequest, toWireOutcome } from "./types.js";

// Per-evaluation limit applied when a request carries no timeout_seconds of
// its own. The aggressive default suits mass filtering runs where most
// rejected candidates loop forever; pass >= 0.5 for anything interactive.
const DEFAULT_TIMEOUT_SECONDS = 0.04;

async function cmdRun(batchPath: string, timeout: number, parallelism: number) {
  const text = await readFile(batchPath, "utf8");
  const lines = text.split("\n").filter((line) => line.trim().length > 0);
  const requests = lines.map((line) => parseWireRequest(line, timeout));
  const outcomes = await runBatch(requests, parallelism);
  for (const outcome of outcomes) {
    process.stdout.write(toWireOutcome(outcome) + "\n");
  }
}

async function cmdExtract(sourcePath: string) {
  const source = await readFile(sourcePath, "utf8");
  const graph = await extractCallGraph(source);
  const wire = {
    functions: graph.functions.map((fn) => ({
      name: fn.name,
      args: fn.args,
      line_span: fn.lineSpan,
      body_lines: fn.bodyLines,
    })),
    calls: graph.calls,
    entry_candidates: graph.entryCandidates,
  };
  process.stdout.write(JSON.stringify(wire, null, 2) + "\n");
}

async function main() {
  await yargs(hideBin(process.argv))
    .scriptName("weaver-harness")
    .command(
      "run <batch>",
      "evaluate a JSONL batch of candidate programs, one outcome line each",
      (args) =>
        args
          .positional("batch", {
            type: "string",
            demandOption: true,
            describe: "file with one JSON evaluation request per line",
          })
          .option("timeout", {
            type: "number",
            default: DEFAULT_TIMEOUT_SECONDS,
            describe: "seconds per evaluation for requests without their own limit",
          })
          .option("parallelism", {
            type: "number",
            default: 1,
            describe: "worker processes to run at once",
          })
          .check((argv) => {
            if (!(argv.timeout > 0)) {
              throw new Error("--timeout must be positive");
            }
            if (!Number.isInteger(argv.parallelism) || argv.parallelism < 1) {
              throw new Error("--parallelism must be a positive integer");
            }
            return true;
          }),
      async (argv) => cmdRun(argv.batch as string, argv.timeout, argv.parallelism),
    )
    .command(
      "extract <source>",
      "print the call graph of a Python file as JSON",
      (args) =>
        args.positional("source", {
          type: "string",
          demandOption: true,
          describe: "Python source file",
        }),
      async (argv) => cmdExtract(argv.source as string),
    )
    .demandCommand(1)
    .strict()
    .fail(false)
    .parseAsync();
}

main().catch((err: unknown) => {
  if (err instanceof ParseError) {
    process.stderr.write(`parse error at line ${err.line}: ${err.message}\n`);
  } else {
    const message = err instanceof Error ? err.message : String(err);
    process.stderr.write(`${message}\n`);
  }
  process.exit(1);
});
