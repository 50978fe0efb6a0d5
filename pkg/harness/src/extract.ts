import { spawn } from "node:child_process";
import { HarnessCrash } from "./types.js";

export interface ExtractedFunction {
  name: string;
  args: string[];
  /** First and last source line of the definition, 1-based inclusive. */
  lineSpan: [number, number];
  /** Non-blank, non-comment lines inside the body. */
  bodyLines: number;
}

export interface CallEdge {
  caller: string;
  callee: string;
  /** True when the callee is not one of the module's own functions. */
  external: boolean;
}

export interface ExtractedCallGraph {
  functions: ExtractedFunction[];
  calls: CallEdge[];
  /** Module functions invoked by top-level code, in first-use order. */
  entryCandidates: string[];
}

export class ParseError extends Error {
  constructor(
    message: string,
    readonly line: number,
  ) {
    super(message);
    this.name = "ParseError";
  }
}

/**
 * The analysis script, run under the target interpreter so that call-site
 * and span reporting rests on the language's own parser rather than a
 * re-implementation. Reads source on stdin, prints one JSON document.
 */
const EXTRACT_SOURCE = String.raw`
import ast, json, sys

source = sys.stdin.read()
try:
    tree = ast.parse(source)
except SyntaxError as exc:
    json.dump({"error": {"message": exc.msg or "invalid syntax",
                         "line": exc.lineno or 0}}, sys.stdout)
    raise SystemExit(0)

lines = source.split("\n")
defs = [node for node in tree.body if isinstance(node, ast.FunctionDef)]
listed = {node.name for node in defs}

def body_line_count(node):
    first = node.body[0].lineno
    last = node.end_lineno or first
    count = 0
    for line in lines[first - 1:last]:
        text = line.strip()
        if text and not text.startswith("#"):
            count += 1
    return count

def called_names(node):
    found = []
    for sub in ast.walk(node):
        if not isinstance(sub, ast.Call):
            continue
        target = sub.func
        if isinstance(target, ast.Name):
            found.append(target.id)
        elif isinstance(target, ast.Attribute):
            found.append(ast.unparse(target))
    return found

functions = [{"name": node.name,
              "args": [arg.arg for arg in node.args.args],
              "line_span": [node.lineno, node.end_lineno or node.lineno],
              "body_lines": body_line_count(node)}
             for node in defs]

calls = []
seen = set()
for node in defs:
    for callee in called_names(node):
        if (node.name, callee) in seen:
            continue
        seen.add((node.name, callee))
        calls.append({"caller": node.name, "callee": callee,
                      "external": callee not in listed})

entry_candidates = []
for node in tree.body:
    if isinstance(node, ast.FunctionDef):
        continue
    for callee in called_names(node):
        if callee in listed and callee not in entry_candidates:
            entry_candidates.append(callee)

json.dump({"functions": functions, "calls": calls,
           "entry_candidates": entry_candidates}, sys.stdout)
`;

/**
 * Report the top-level functions of a Python module, the calls each one
 * makes, and which functions the module-level code drives.
 */
export async function extractCallGraph(source: string): Promise<ExtractedCallGraph> {
  const raw = await runAnalysis(source);
  let data: Record<string, unknown>;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new HarnessCrash(`analysis produced no JSON: ${raw.slice(0, 120)}`);
  }
  if (data.error) {
    const failure = data.error as { message: string; line: number };
    throw new ParseError(failure.message, failure.line);
  }
  const functions = (data.functions as Array<Record<string, unknown>>).map((fn) => ({
    name: fn.name as string,
    args: fn.args as string[],
    lineSpan: fn.line_span as [number, number],
    bodyLines: fn.body_lines as number,
  }));
  return {
    functions,
    calls: data.calls as CallEdge[],
    entryCandidates: data.entry_candidates as string[],
  };
}

function runAnalysis(source: string): Promise<string> {
  return new Promise((resolve, reject) => {
    const child = spawn("python3", ["-I", "-c", EXTRACT_SOURCE], {
      stdio: ["pipe", "pipe", "pipe"],
    });
    let stdout = "";
    let stderr = "";
    child.stdout.on("data", (chunk: Buffer) => {
      stdout += chunk.toString();
    });
    child.stderr.on("data", (chunk: Buffer) => {
      stderr = (stderr + chunk.toString()).slice(-500);
    });
    child.once("error", (err) => reject(new HarnessCrash(`analysis failed: ${err}`)));
    child.once("close", (code) => {
      if (code !== 0) {
        reject(new HarnessCrash(`analysis exited ${code}: ${stderr}`));
      } else {
        resolve(stdout);
      }
    });
    child.stdin.on("error", () => {});
    child.stdin.end(source);
  });
}
