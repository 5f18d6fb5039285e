/**
 * Result-line protocol shared with the orchestrator.
 *
 * The executor prints exactly one JSON object on stdout with keys, in
 * order: status, exit_code, output_image_bytes, diagnostics. The process
 * exit code mirrors the status so shell callers can branch without
 * parsing.
 */

export type ExecStatus = "ok" | "exec_error" | "timeout" | "no_output";

export interface ExecResult {
  status: ExecStatus;
  /** Exit code of the executed script; null when it was killed on timeout. */
  exit_code: number | null;
  /** Size of the output image in bytes; 0 unless status is ok. */
  output_image_bytes: number;
  /** Captured script stderr (stdout as fallback), truncated. */
  diagnostics: string;
}

export const EXIT_CODES: Record<ExecStatus, number> = {
  ok: 0,
  exec_error: 10,
  timeout: 11,
  no_output: 12,
};

export const DIAGNOSTICS_LIMIT = 16 * 1024;

export function toResultLine(result: ExecResult): string {
  return JSON.stringify({
    status: result.status,
    exit_code: result.exit_code,
    output_image_bytes: result.output_image_bytes,
    diagnostics: result.diagnostics.slice(0, DIAGNOSTICS_LIMIT),
  });
}

/**
 * Parse a result line out of captured stdout, scanning bottom-up and
 * skipping any noise an executed script may have leaked. Mirrors the
 * orchestrator-side parser; used by tests to prove round-tripping.
 */
export function parseResultLine(stdout: string): ExecResult {
  const lines = stdout.split("\n");
  for (let i = lines.length - 1; i >= 0; i--) {
    const line = lines[i].trim();
    if (!line.startsWith("{")) continue;
    let data: unknown;
    try {
      data = JSON.parse(line);
    } catch {
      continue;
    }
    if (typeof data !== "object" || data === null || !("status" in data)) continue;
    const record = data as Record<string, unknown>;
    return {
      status: String(record.status) as ExecStatus,
      exit_code: record.exit_code === null ? null : Number(record.exit_code),
      output_image_bytes: Number(record.output_image_bytes ?? 0),
      diagnostics: String(record.diagnostics ?? "").slice(0, DIAGNOSTICS_LIMIT),
    };
  }
  throw new Error(`no result line found in: ${stdout.slice(0, 500)}`);
}
