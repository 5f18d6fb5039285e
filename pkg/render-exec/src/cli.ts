#!/usr/bin/env node
/**
 * render-exec: run one plotting script, print one JSON result line.
 *
 *   render-exec --code-path plot.py --output-image-path out.png \
 *               --timeout-s 30 --workdir work/job1
 *
 * Exit code mirrors the result status: 0 ok, 10 exec_error, 11 timeout,
 * 12 no_output. Flag errors exit 2.
 */

import { executeScript, type ExecRequest } from "./executor.js";
import { EXIT_CODES, toResultLine } from "./protocol.js";

const FLAGS = ["--code-path", "--output-image-path", "--timeout-s", "--workdir"] as const;

function parseArgs(argv: string[]): ExecRequest {
  const values = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!(FLAGS as readonly string[]).includes(flag) || value === undefined) {
      throw new Error(`unexpected argument: ${flag}`);
    }
    values.set(flag, value);
  }
  for (const flag of FLAGS) {
    if (!values.has(flag)) throw new Error(`missing required flag: ${flag}`);
  }
  const timeoutS = Number(values.get("--timeout-s"));
  if (!Number.isFinite(timeoutS) || timeoutS <= 0) {
    throw new Error("--timeout-s must be a positive number");
  }
  return {
    codePath: values.get("--code-path")!,
    outputImagePath: values.get("--output-image-path")!,
    timeoutS,
    workdir: values.get("--workdir")!,
  };
}

async function main(): Promise<number> {
  let request: ExecRequest;
  try {
    request = parseArgs(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
    return 2;
  }
  const result = await executeScript(request);
  process.stdout.write(toResultLine(result) + "\n");
  return EXIT_CODES[result.status];
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(`render-exec failed: ${err?.stack ?? err}\n`);
    process.exit(2);
  }
);
