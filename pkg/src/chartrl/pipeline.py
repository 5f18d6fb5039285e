"""Replot-and-generate pipeline orchestration.

Each chart flows through three stages: a model client writes plotting
code for the chart image, an external executor renders that code into a
fresh image, and the client then writes QA records conditioned on both
the rendered image and the code. Jobs that fail at any stage are excluded
and contribute no records. The executor is a separate process speaking a
one-line JSON protocol on stdout, so any binary honoring the protocol can
act as the render backend.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import shlex
import subprocess
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .datasets import QARecord, validate_record, write_records

__all__ = [
    "ClientError",
    "QAParseError",
    "ExecutorError",
    "CodeReply",
    "ModelClient",
    "MockClient",
    "RemoteClient",
    "ExecRequest",
    "ExecResult",
    "EXEC_STATUSES",
    "parse_exec_result_line",
    "RenderExecutor",
    "PipelineConfig",
    "PipelineJob",
    "PipelineManifest",
    "generate_plot_code",
    "render_chart",
    "generate_qa_records",
    "run_pipeline",
]

logger = logging.getLogger(__name__)

LANGUAGES = ("python_plotting", "js_plotting")
_CODE_SUFFIX = {"python_plotting": ".py", "js_plotting": ".js"}

CODE_PROMPT = (
    "Write a self-contained Python matplotlib script that reproduces the chart in "
    "the attached image: same chart type, data values, colors, text, axis labels, "
    "and overall layout. The script must save the figure as chart.png in its "
    "working directory. Reply with the code only."
)

QA_PROMPT = """\
Using the attached chart image together with the plotting code that produced it \
(the code carries the exact underlying data, but every question must be answerable \
from the image alone), write training examples as a JSON array. Each element must \
have exactly these fields: "input" (the question), "chain_of_thought" (step-by-step \
reasoning formatted as <thinking> reasoning here </thinking> <answer> final answer \
here </answer>), "final_answer" (the answer by itself), and "question_type".

Produce exactly sixteen examples:
- 3 of type "numerical": arithmetic over chart values (max, min, sum, average, \
difference, ratio, median, ...).
- 3 of type "visual_numerical": arithmetic combined with a visual cue (leftmost, \
tallest, peak, color, position).
- 3 of type "data_retrieval": read off a value, an axis label, or a legend entry.
- 2 of type "yes_no": the answer must be Yes or No.
- 2 of type "counting": count chart elements (bars, slices, colors, tick labels).
- 1 of type "unanswerable": a question the image cannot answer; the answer must be \
Unanswerable.
- 1 of type "multiple_choice": include 3 or more labeled options (letters, digits, \
or roman numerals); the answer is the option label only.
- 1 of type "conversational": a short dialog history plus a final question, all in \
the "input" string; the reasoning covers the final question only.

Answer formatting rules: keep answers as short as possible; copy labels verbatim \
from the chart; give ratios as decimals (0.25, not 1:4); give percentages as whole \
values (17, not 0.17); never append units; use [a, b] list syntax when an answer \
has several items.\
"""


class ClientError(Exception):
    """A model-client call failed after exhausting its retries."""


class QAParseError(Exception):
    """The client's QA reply could not be parsed; the raw reply is retained."""

    def __init__(self, message: str, raw_reply: str) -> None:
        super().__init__(message)
        self.raw_reply = raw_reply


class ExecutorError(Exception):
    """The render executor could not be run or violated its protocol."""


@dataclass(frozen=True)
class CodeReply:
    """Generated plotting code plus the prompt that produced it."""

    code: str
    language: str
    prompt: str

    def __post_init__(self) -> None:
        if self.language not in LANGUAGES:
            raise ValueError(f"unknown language tag: {self.language!r}")


class ModelClient(ABC):
    """Teacher-model interface for code and QA generation."""

    last_attempts: int = 1

    @abstractmethod
    def generate_plot_code(self, image_ref: str | Path) -> CodeReply: ...

    @abstractmethod
    def generate_qa(self, image_ref: str | Path, code: str) -> str: ...

    @abstractmethod
    def identity(self) -> str: ...


@dataclass(frozen=True)
class ChartFixture:
    """Canned client outputs for one chart, keyed by image content hash."""

    code: str
    qa_reply: str
    language: str = "python_plotting"


def content_hash(image_ref: str | Path) -> str:
    return hashlib.sha256(Path(image_ref).read_bytes()).hexdigest()


class MockClient(ModelClient):
    """Deterministic client backed by content-hash-keyed fixtures."""

    def __init__(self, fixtures: dict[str, ChartFixture]) -> None:
        self._fixtures = dict(fixtures)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockClient":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        fixtures = {
            key: ChartFixture(
                code=entry["code"],
                qa_reply=entry["qa_reply"],
                language=entry.get("language", "python_plotting"),
            )
            for key, entry in data.items()
        }
        return cls(fixtures)

    def _fixture(self, image_ref: str | Path) -> ChartFixture:
        digest = content_hash(image_ref)
        try:
            return self._fixtures[digest]
        except KeyError:
            raise ClientError(f"no fixture for content hash {digest}") from None

    def generate_plot_code(self, image_ref: str | Path) -> CodeReply:
        self.last_attempts = 1
        fixture = self._fixture(image_ref)
        return CodeReply(code=fixture.code, language=fixture.language, prompt=CODE_PROMPT)

    def generate_qa(self, image_ref: str | Path, code: str) -> str:
        self.last_attempts = 1
        return self._fixture(image_ref).qa_reply

    def identity(self) -> str:
        return "mock"


class RemoteClient(ModelClient):
    """HTTP client with bounded exponential-backoff retries.

    Requests carry the prompt text and the base64-encoded image; replies
    are structured text (a JSON body with a ``text`` field, or the raw
    body). Calls are idempotent, so retried work is safe; a minimum
    interval between requests provides simple rate limiting.
    """

    RETRYABLE_STATUS = (429, 500, 502, 503, 504)

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        max_retries: int = 2,
        backoff_base_ms: int = 250,
        min_interval_s: float = 0.0,
        session=None,
        sleeper=time.sleep,
        timeout_s: float = 60.0,
    ) -> None:
        if not api_key:
            raise ClientError("remote client requires a non-empty API key")
        self.endpoint = endpoint
        self._api_key = api_key
        self.max_retries = max_retries
        self.backoff_base_ms = backoff_base_ms
        self.min_interval_s = min_interval_s
        self.timeout_s = timeout_s
        self._sleep = sleeper
        self._session = session
        self._lock = threading.Lock()
        self._last_request = 0.0
        self._tls = threading.local()  # per-thread attempt counts under the worker pool

    @property
    def last_attempts(self) -> int:
        return getattr(self._tls, "attempts", 0)

    def _note_attempt(self, attempt: int) -> None:
        self._tls.attempts = attempt

    def _get_session(self):
        if self._session is None:
            import requests

            self._session = requests.Session()
        return self._session

    def _throttle(self) -> None:
        if self.min_interval_s <= 0:
            return
        with self._lock:
            wait = self._last_request + self.min_interval_s - time.monotonic()
            if wait > 0:
                self._sleep(wait)
            self._last_request = time.monotonic()

    def _request(self, prompt: str, image_ref: str | Path) -> str:
        payload = {
            "prompt": prompt,
            "image_base64": base64.b64encode(Path(image_ref).read_bytes()).decode("ascii"),
        }
        headers = {"Authorization": f"Bearer {self._api_key}"}
        last_error: Exception | None = None
        for attempt in range(1, self.max_retries + 2):
            self._note_attempt(attempt)
            self._throttle()
            try:
                resp = self._get_session().post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
            except Exception as exc:  # connection-level failure
                last_error = exc
                logger.warning("request attempt %d failed: %s", attempt, exc)
            else:
                if resp.status_code < 400:
                    logger.debug("request attempt %d ok (%d)", attempt, resp.status_code)
                    try:
                        body = resp.json()
                        if isinstance(body, dict) and "text" in body:
                            return str(body["text"])
                    except ValueError:
                        pass
                    return resp.text
                last_error = ClientError(f"HTTP {resp.status_code}")
                if resp.status_code not in self.RETRYABLE_STATUS:
                    break
                logger.warning("request attempt %d got HTTP %d", attempt, resp.status_code)
            if attempt <= self.max_retries:
                self._sleep(self.backoff_base_ms * 2 ** (attempt - 1) / 1000.0)
        raise ClientError(f"request failed after {self.last_attempts} attempts: {last_error}")

    @staticmethod
    def _extract_code(reply: str) -> tuple[str, str]:
        """Pull code and a language tag out of an optionally fenced reply."""
        text = reply.strip()
        if text.startswith("```"):
            first_newline = text.index("\n") if "\n" in text else len(text)
            fence_info = text[3:first_newline].strip().lower()
            body = text[first_newline + 1 :]
            if body.rstrip().endswith("```"):
                body = body.rstrip()[:-3]
            language = (
                "js_plotting"
                if fence_info in ("js", "javascript", "jsx", "node")
                else "python_plotting"
            )
            return body.strip("\n") + "\n", language
        return text + "\n", "python_plotting"

    def generate_plot_code(self, image_ref: str | Path) -> CodeReply:
        reply = self._request(CODE_PROMPT, image_ref)
        code, language = self._extract_code(reply)
        return CodeReply(code=code, language=language, prompt=CODE_PROMPT)

    def generate_qa(self, image_ref: str | Path, code: str) -> str:
        prompt = f"{QA_PROMPT}\n\nPlotting code:\n{code}"
        return self._request(prompt, image_ref)

    def identity(self) -> str:
        return f"remote:{self.endpoint}"


# --- executor line protocol ---------------------------------------------

EXEC_STATUSES = ("ok", "exec_error", "timeout", "no_output")

# Executor process exit codes mirror the result status.
EXEC_EXIT_CODES = {"ok": 0, "exec_error": 10, "timeout": 11, "no_output": 12}

DIAGNOSTICS_LIMIT = 16 * 1024


@dataclass(frozen=True)
class ExecRequest:
    """One render request passed to the executor as flags."""

    code_path: str
    output_image_path: str
    timeout_s: int
    workdir: str

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")

    def to_args(self) -> list[str]:
        return [
            "--code-path",
            self.code_path,
            "--output-image-path",
            self.output_image_path,
            "--timeout-s",
            str(self.timeout_s),
            "--workdir",
            self.workdir,
        ]


@dataclass(frozen=True)
class ExecResult:
    """Structured outcome of one executor run.

    Serialized as a single JSON line with keys, in order: status,
    exit_code, output_image_bytes, diagnostics.
    """

    status: str
    exit_code: int | None
    output_image_bytes: int
    diagnostics: str

    def __post_init__(self) -> None:
        if self.status not in EXEC_STATUSES:
            raise ValueError(f"unknown executor status: {self.status!r}")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_line(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "exit_code": self.exit_code,
                "output_image_bytes": self.output_image_bytes,
                "diagnostics": self.diagnostics[:DIAGNOSTICS_LIMIT],
            }
        )


def parse_exec_result_line(stdout: str) -> ExecResult:
    """Parse the executor's result line from its stdout.

    Scans lines bottom-up for a JSON object carrying a ``status`` field,
    tolerating any extra output the executed script may have leaked.
    """
    for line in reversed(stdout.splitlines()):
        line = line.strip()
        if not line.startswith("{"):
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError:
            continue
        if not isinstance(data, dict) or "status" not in data:
            continue
        exit_code = data.get("exit_code")
        return ExecResult(
            status=str(data["status"]),
            exit_code=None if exit_code is None else int(exit_code),
            output_image_bytes=int(data.get("output_image_bytes", 0)),
            diagnostics=str(data.get("diagnostics", ""))[:DIAGNOSTICS_LIMIT],
        )
    raise ExecutorError(f"no result line found in executor output: {stdout[:2000]!r}")


class RenderExecutor:
    """Runs the external executor process for one request at a time."""

    def __init__(self, command: str | Sequence[str], grace_s: float = 10.0) -> None:
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("executor command must be non-empty")
        self.grace_s = grace_s

    def run(self, request: ExecRequest) -> ExecResult:
        argv = self.command + request.to_args()
        try:
            proc = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=request.timeout_s + self.grace_s,
            )
        except FileNotFoundError as exc:
            raise ExecutorError(f"executor not found: {self.command[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise ExecutorError(
                f"executor exceeded its own timeout handling ({exc.timeout}s)"
            ) from exc
        result = parse_exec_result_line(proc.stdout)
        if EXEC_EXIT_CODES.get(result.status) != proc.returncode:
            logger.warning(
                "executor exit code %d does not match status %r",
                proc.returncode,
                result.status,
            )
        return result


# --- orchestration --------------------------------------------------------


@dataclass
class PipelineConfig:
    """Run configuration; load from a JSON file and override with flags."""

    client: str = "mock"
    endpoint: str = ""
    api_key_env_var: str = "CHARTRL_API_KEY"
    max_retries: int = 2
    backoff_base_ms: int = 250
    parallelism: int = 1
    render_timeout_s: int = 30
    executor_path: str = ""
    js_executor_path: str = ""
    seed: int = 0
    fixtures_path: str = ""
    source_tag: str = "replotted"

    def __post_init__(self) -> None:
        if self.client not in ("mock", "remote"):
            raise ValueError(f"client must be 'mock' or 'remote', got {self.client!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.render_timeout_s < 1:
            raise ValueError("render_timeout_s must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "PipelineConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def build_client(self) -> ModelClient:
        if self.client == "mock":
            if not self.fixtures_path:
                raise ValueError("mock client requires fixtures_path")
            return MockClient.from_file(self.fixtures_path)
        import os

        api_key = os.environ.get(self.api_key_env_var, "")
        if not api_key:
            raise ClientError(
                f"API key environment variable {self.api_key_env_var!r} is not set"
            )
        if not self.endpoint:
            raise ValueError("remote client requires an endpoint")
        return RemoteClient(
            endpoint=self.endpoint,
            api_key=api_key,
            max_retries=self.max_retries,
            backoff_base_ms=self.backoff_base_ms,
        )


@dataclass
class PipelineJob:
    """Per-chart unit of work with its render outcome."""

    chart_id: str
    image_ref: str
    language: str = ""
    status: str = "pending"  # pending | rendered | failed
    reason: str = ""
    image_path: str = ""
    attempts: int = 0
    qa_records: int = 0
    dropped_drafts: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": "job",
            "chart_id": self.chart_id,
            "status": self.status,
            "reason": self.reason,
            "language": self.language,
            "attempts": self.attempts,
            "qa_records": self.qa_records,
            "dropped_drafts": self.dropped_drafts,
        }


@dataclass
class PipelineManifest:
    """Accounting for one pipeline run; input = rendered + excluded."""

    input: int
    rendered: int
    excluded: int
    qa_records: int
    seed: int
    client: str
    duration_s: float
    jobs: list[PipelineJob] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.input != self.rendered + self.excluded:
            raise ValueError("manifest invariant violated: input != rendered + excluded")

    def to_jsonl(self) -> str:
        totals = {
            "kind": "totals",
            "input": self.input,
            "rendered": self.rendered,
            "excluded": self.excluded,
            "qa_records": self.qa_records,
            "seed": self.seed,
            "client": self.client,
            "duration_s": self.duration_s,
        }
        lines = [json.dumps(totals)]
        lines.extend(json.dumps(job.to_dict()) for job in self.jobs)
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def generate_plot_code(client: ModelClient, chart: str | Path) -> CodeReply:
    """Ask the client for plotting code; the reply carries the audit prompt."""
    reply = client.generate_plot_code(chart)
    logger.debug("code prompt for %s: %s", chart, reply.prompt)
    return reply


def render_chart(
    code: str,
    language: str,
    executor: RenderExecutor,
    output_image_path: str | Path,
    workdir: str | Path,
    code_dir: str | Path,
    timeout_s: int = 30,
) -> ExecResult:
    """Write the code to disk and render it through the executor.

    Success requires executor status ``ok`` and a non-empty image file at
    ``output_image_path`` (re-checked here, not just trusted).
    """
    suffix = _CODE_SUFFIX.get(language)
    if suffix is None:
        raise ValueError(f"unknown language tag: {language!r}")
    code_dir = Path(code_dir)
    code_dir.mkdir(parents=True, exist_ok=True)
    code_path = code_dir / f"plot{suffix}"
    code_path.write_text(code, encoding="utf-8")

    request = ExecRequest(
        code_path=str(code_path),
        output_image_path=str(output_image_path),
        timeout_s=timeout_s,
        workdir=str(workdir),
    )
    result = executor.run(request)
    if result.ok:
        out = Path(output_image_path)
        if not out.is_file() or out.stat().st_size == 0:
            return ExecResult(
                status="no_output",
                exit_code=result.exit_code,
                output_image_bytes=0,
                diagnostics="executor reported ok but the output image is missing or empty",
            )
    return result


def _tolerant_json_array(reply: str) -> list:
    """Extract a JSON array from a reply that may carry fences or prose."""
    text = reply.strip()
    if text.startswith("```"):
        lines = text.splitlines()
        if lines and lines[0].startswith("```"):
            lines = lines[1:]
        if lines and lines[-1].strip() == "```":
            lines = lines[:-1]
        text = "\n".join(lines)
    try:
        data = json.loads(text)
        if isinstance(data, list):
            return data
    except json.JSONDecodeError:
        pass
    start = text.find("[")
    end = text.rfind("]")
    if start != -1 and end > start:
        try:
            data = json.loads(text[start : end + 1])
            if isinstance(data, list):
                return data
        except json.JSONDecodeError:
            pass
    raise QAParseError("reply does not contain a JSON array", raw_reply=reply)


def generate_qa_records(
    client: ModelClient,
    image: str | Path,
    code: str,
    chart_id: str = "chart",
    source: str = "replotted",
    image_ref: str | None = None,
) -> tuple[list[QARecord], int]:
    """Generate QA records for a rendered chart; invalid drafts are dropped.

    The image and the code are sent together so questions can reflect both
    the visual rendering and the exact underlying data. Every draft passes
    through record validation; drafts with findings are counted, never
    repaired. ``image_ref`` overrides the reference stored on records (the
    orchestrator passes a path relative to its output directory so record
    files are location-independent). Returns (kept records, dropped count).
    """
    reply = client.generate_qa(image, code)
    drafts = _tolerant_json_array(reply)
    records: list[QARecord] = []
    dropped = 0
    for i, draft in enumerate(drafts):
        if not isinstance(draft, dict):
            dropped += 1
            continue
        try:
            record = QARecord(
                id=f"{chart_id}-q{i:02d}",
                image_ref=image_ref if image_ref is not None else str(image),
                input=str(draft["input"]),
                chain_of_thought=str(draft["chain_of_thought"]),
                final_answer=str(draft["final_answer"]),
                question_type=str(draft["question_type"]),
                source=source,
            )
        except (KeyError, ValueError, TypeError):
            dropped += 1
            continue
        if validate_record(record):
            dropped += 1
            continue
        records.append(record)
    return records, dropped


def _run_job(
    chart_path: Path,
    client: ModelClient,
    config: PipelineConfig,
    out_dir: Path,
) -> tuple[PipelineJob, list[QARecord]]:
    chart_id = chart_path.stem
    job = PipelineJob(chart_id=chart_id, image_ref=str(chart_path))

    try:
        reply = generate_plot_code(client, chart_path)
    except (FileNotFoundError, OSError):
        job.status, job.reason = "failed", "io_error"
        job.attempts = client.last_attempts
        return job, []
    except ClientError:
        job.status, job.reason = "failed", "client_error"
        job.attempts = client.last_attempts
        return job, []
    job.language = reply.language
    job.attempts = client.last_attempts

    executor_cmd = (
        config.executor_path if reply.language == "python_plotting" else config.js_executor_path
    )
    if not executor_cmd:
        job.status, job.reason = "failed", "executor_unavailable"
        return job, []

    image_path = out_dir / "images" / f"{chart_id}.png"
    result = render_chart(
        code=reply.code,
        language=reply.language,
        executor=RenderExecutor(executor_cmd),
        output_image_path=image_path,
        workdir=out_dir / "work" / chart_id,
        code_dir=out_dir / "code" / chart_id,
        timeout_s=config.render_timeout_s,
    )
    if not result.ok:
        job.status, job.reason = "failed", result.status
        return job, []
    job.status = "rendered"
    job.image_path = str(image_path)

    try:
        records, dropped = generate_qa_records(
            client,
            image_path,
            reply.code,
            chart_id=chart_id,
            source=config.source_tag,
            image_ref=f"images/{chart_id}.png",
        )
    except ClientError:
        job.status, job.reason = "failed", "client_error"
        job.attempts = max(job.attempts, client.last_attempts)
        return job, []
    except QAParseError as exc:
        job.status, job.reason = "failed", "parse_error"
        logger.warning("unparseable QA reply for %s: %r", chart_id, exc.raw_reply[:500])
        return job, []
    job.attempts = max(job.attempts, client.last_attempts)
    job.qa_records = len(records)
    job.dropped_drafts = dropped
    return job, records


def run_pipeline(
    charts: Sequence[str | Path],
    config: PipelineConfig,
    out_dir: str | Path,
) -> PipelineManifest:
    """Run code-gen, render, and QA-gen for every chart.

    Jobs run under a bounded worker pool; outputs are sorted by chart id
    so results are independent of scheduling. A job failure excludes that
    chart; the run itself fails only on configuration or write errors.
    Writes ``records.jsonl`` and ``manifest.jsonl`` under ``out_dir``.
    """
    paths = [Path(c) for c in charts]
    ids = [p.stem for p in paths]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate chart ids (file stems) in input")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    client = config.build_client()
    started = time.monotonic()

    results: list[tuple[PipelineJob, list[QARecord]]] = []
    if config.parallelism == 1:
        for path in paths:
            results.append(_run_job(path, client, config, out))
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            futures = [pool.submit(_run_job, path, client, config, out) for path in paths]
            results = [f.result() for f in futures]

    results.sort(key=lambda pair: pair[0].chart_id)
    jobs = [job for job, _ in results]
    records = [record for _, recs in results for record in recs]

    rendered = sum(1 for j in jobs if j.status == "rendered")
    manifest = PipelineManifest(
        input=len(jobs),
        rendered=rendered,
        excluded=len(jobs) - rendered,
        qa_records=len(records),
        seed=config.seed,
        client=client.identity(),
        duration_s=round(time.monotonic() - started, 3),
        jobs=jobs,
    )
    write_records(records, out / "records.jsonl")
    manifest.write(out / "manifest.jsonl")
    return manifest
