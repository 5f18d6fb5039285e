/**
 * Runs one generated plotting script in an isolated working directory.
 *
 * The script executes headlessly (MPLBACKEND=Agg, no display) with the
 * requested output path exported as CHART_OUTPUT_PATH; a `chart.png`
 * written to the working directory is accepted as a fallback, matching
 * the convention generated plotting code tends to follow. The working
 * directory is fresh per request and removed afterwards. Isolation is
 * best-effort (own process, own cwd), not a security boundary.
 */

import { spawn } from "node:child_process";
import { mkdir, rename, rm, stat } from "node:fs/promises";
import path from "node:path";

import { DIAGNOSTICS_LIMIT, type ExecResult } from "./protocol.js";

export interface ExecRequest {
  codePath: string;
  outputImagePath: string;
  timeoutS: number;
  workdir: string;
}

const CAPTURE_LIMIT = 1024 * 1024; // per stream, keeps runaway scripts bounded

const PYTHON = process.env.RENDER_EXEC_PYTHON ?? "python3";

async function fileSize(filePath: string): Promise<number> {
  try {
    const info = await stat(filePath);
    return info.isFile() ? info.size : 0;
  } catch {
    return 0;
  }
}

interface SpawnOutcome {
  exitCode: number | null;
  timedOut: boolean;
  stdout: string;
  stderr: string;
  spawnError?: Error;
}

function runScript(request: ExecRequest): Promise<SpawnOutcome> {
  return new Promise((resolve) => {
    const child = spawn(PYTHON, [path.resolve(request.codePath)], {
      cwd: request.workdir,
      env: {
        ...process.env,
        CHART_OUTPUT_PATH: path.resolve(request.outputImagePath),
        MPLBACKEND: "Agg",
      },
      stdio: ["ignore", "pipe", "pipe"],
    });

    let stdout = "";
    let stderr = "";
    let timedOut = false;
    let settled = false;

    const timer = setTimeout(() => {
      timedOut = true;
      child.kill("SIGKILL");
    }, request.timeoutS * 1000);

    child.stdout.on("data", (chunk: Buffer) => {
      if (stdout.length < CAPTURE_LIMIT) stdout += chunk.toString("utf8");
    });
    child.stderr.on("data", (chunk: Buffer) => {
      if (stderr.length < CAPTURE_LIMIT) stderr += chunk.toString("utf8");
    });

    const finish = (outcome: SpawnOutcome) => {
      if (settled) return;
      settled = true;
      clearTimeout(timer);
      resolve(outcome);
    };

    child.on("error", (err) =>
      finish({ exitCode: null, timedOut, stdout, stderr, spawnError: err })
    );
    child.on("close", (code) => finish({ exitCode: code, timedOut, stdout, stderr }));
  });
}

export async function executeScript(request: ExecRequest): Promise<ExecResult> {
  if (request.timeoutS <= 0) {
    throw new Error("timeoutS must be positive");
  }
  await mkdir(request.workdir, { recursive: true });
  await mkdir(path.dirname(path.resolve(request.outputImagePath)), { recursive: true });

  try {
    const outcome = await runScript(request);
    const diagnostics = (outcome.stderr || outcome.stdout || "").slice(0, DIAGNOSTICS_LIMIT);

    if (outcome.timedOut) {
      return {
        status: "timeout",
        exit_code: null,
        output_image_bytes: 0,
        diagnostics: diagnostics || `killed after ${request.timeoutS}s`,
      };
    }
    if (outcome.spawnError) {
      return {
        status: "exec_error",
        exit_code: null,
        output_image_bytes: 0,
        diagnostics: `failed to run ${PYTHON}: ${outcome.spawnError.message}`,
      };
    }
    if (outcome.exitCode !== 0) {
      return {
        status: "exec_error",
        exit_code: outcome.exitCode,
        output_image_bytes: 0,
        diagnostics,
      };
    }

    let size = await fileSize(request.outputImagePath);
    if (size === 0) {
      const fallback = path.join(request.workdir, "chart.png");
      if ((await fileSize(fallback)) > 0) {
        await rename(fallback, path.resolve(request.outputImagePath));
        size = await fileSize(request.outputImagePath);
      }
    }
    if (size === 0) {
      return {
        status: "no_output",
        exit_code: outcome.exitCode,
        output_image_bytes: 0,
        diagnostics: diagnostics || "script exited cleanly but produced no image",
      };
    }
    return { status: "ok", exit_code: outcome.exitCode, output_image_bytes: size, diagnostics };
  } finally {
    await rm(request.workdir, { recursive: true, force: true });
  }
}
