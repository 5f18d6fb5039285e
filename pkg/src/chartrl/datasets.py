"""QA/CoT record handling: loading, validation, statistics, and sampling.

Records live in UTF-8 line-delimited files, one JSON object per line with
keys {id, image_ref, input, chain_of_thought, final_answer, question_type,
source}. Loading is tolerant (malformed lines become issues, not
failures); serialization is canonical so load-then-serialize is the
identity on well-formed files.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .answers import AnswerKind, MatchPolicy, answers_match, classify_answer_type, parse_answer
from .rewards import format_reward

__all__ = [
    "QUESTION_TYPES",
    "QARecord",
    "Issue",
    "DatasetStats",
    "SubsetSpec",
    "load_records",
    "record_to_json",
    "serialize_records",
    "write_records",
    "validate_record",
    "dataset_stats",
    "sample_subset",
    "build_rl_mix",
]

QUESTION_TYPES = (
    "numerical",
    "visual_numerical",
    "data_retrieval",
    "yes_no",
    "counting",
    "unanswerable",
    "multiple_choice",
    "conversational",
)

_RECORD_KEYS = (
    "id",
    "image_ref",
    "input",
    "chain_of_thought",
    "final_answer",
    "question_type",
    "source",
)

# Which parsed answer kinds are consistent with each question type. Types
# absent here (data_retrieval, conversational) accept any answer kind.
_TYPE_KINDS: dict[str, tuple[AnswerKind, ...]] = {
    "numerical": (AnswerKind.NUMERIC, AnswerKind.LIST),
    "visual_numerical": (AnswerKind.NUMERIC, AnswerKind.LIST),
    "counting": (AnswerKind.NUMERIC,),
    "yes_no": (AnswerKind.YES_NO,),
    "unanswerable": (AnswerKind.UNANSWERABLE,),
    "multiple_choice": (AnswerKind.OPTION, AnswerKind.NUMERIC),
}


@dataclass
class QARecord:
    """One dataset sample: question, chain of thought, and final answer."""

    id: str
    image_ref: str
    input: str
    chain_of_thought: str
    final_answer: str
    question_type: str
    source: str

    def __post_init__(self) -> None:
        for key in _RECORD_KEYS:
            if not isinstance(getattr(self, key), str):
                raise ValueError(f"field {key!r} must be a string")
        if not self.final_answer:
            raise ValueError("final_answer must be non-empty")
        if self.question_type not in QUESTION_TYPES:
            raise ValueError(f"unknown question_type: {self.question_type!r}")


@dataclass(frozen=True)
class Issue:
    """A validation finding; never an exception."""

    code: str
    message: str
    line: int | None = None
    record_id: str | None = None


@dataclass
class DatasetStats:
    n_records: int
    answer_type_histogram: dict[str, int]
    question_type_histogram: dict[str, int]
    cot_token_stats: dict[str, float]
    unanswerable_fraction: float

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "answer_type_histogram": dict(sorted(self.answer_type_histogram.items())),
            "question_type_histogram": dict(sorted(self.question_type_histogram.items())),
            "cot_token_stats": self.cot_token_stats,
            "unanswerable_fraction": self.unanswerable_fraction,
        }


@dataclass(frozen=True)
class SubsetSpec:
    """Stratified subset request: proportional allocation, seeded sampling."""

    target_size: int = 1000
    strata_key: str = "question_type"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.target_size < 0:
            raise ValueError("target_size must be nonnegative")


def record_to_json(record: QARecord) -> str:
    """Canonical one-line JSON form with fixed key order."""
    return json.dumps(
        {key: getattr(record, key) for key in _RECORD_KEYS}, ensure_ascii=False
    )


def serialize_records(records: Iterable[QARecord]) -> str:
    return "".join(record_to_json(r) + "\n" for r in records)


def write_records(records: Iterable[QARecord], path: str | Path) -> None:
    Path(path).write_text(serialize_records(records), encoding="utf-8")


def _record_from_dict(data: dict) -> QARecord:
    missing = [k for k in _RECORD_KEYS if k not in data]
    if missing:
        raise ValueError(f"missing keys: {', '.join(missing)}")
    extra = sorted(set(data) - set(_RECORD_KEYS))
    if extra:
        raise ValueError(f"unexpected keys: {', '.join(extra)}")
    return QARecord(**{k: data[k] for k in _RECORD_KEYS})


def load_records(path: str | Path) -> tuple[list[QARecord], list[Issue]]:
    """Parse a line-delimited record file.

    Each line is parsed independently; malformed lines are reported as
    issues with their line number. Raises ``OSError`` only when the path
    itself is unreadable.
    """
    text = Path(path).read_text(encoding="utf-8")
    records: list[QARecord] = []
    issues: list[Issue] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            issues.append(Issue(code="bad_json", message=str(exc), line=lineno))
            continue
        if not isinstance(data, dict):
            issues.append(Issue(code="not_an_object", message="line is not a JSON object", line=lineno))
            continue
        try:
            records.append(_record_from_dict(data))
        except (ValueError, TypeError) as exc:
            issues.append(Issue(code="bad_record", message=str(exc), line=lineno))
    return records, issues


_ANSWER_TAG = ("<answer>", "</answer>")


def _cot_answer_span(cot: str) -> str | None:
    start = cot.find(_ANSWER_TAG[0])
    if start == -1:
        return None
    end = cot.find(_ANSWER_TAG[1], start)
    if end == -1:
        return None
    return cot[start + len(_ANSWER_TAG[0]) : end].strip()


def validate_record(record: QARecord) -> list[Issue]:
    """Semantic checks on one record; all findings are issues.

    Checks the chain-of-thought structure, consistency of the final answer
    with the question type, agreement between the answer embedded in the
    chain of thought and the final answer (strict comparison), and the
    unanswerable sentinel in both directions.
    """
    issues: list[Issue] = []
    rid = record.id

    if format_reward(record.chain_of_thought) != 1:
        issues.append(
            Issue(
                code="cot_format",
                message="chain_of_thought lacks the thinking/answer structure",
                record_id=rid,
            )
        )

    final = parse_answer(record.final_answer)
    allowed = _TYPE_KINDS.get(record.question_type)
    if allowed is not None and final.kind not in allowed:
        issues.append(
            Issue(
                code="type_answer_conflict",
                message=(
                    f"question_type {record.question_type!r} is inconsistent with "
                    f"answer kind {final.kind.value!r}"
                ),
                record_id=rid,
            )
        )

    span = _cot_answer_span(record.chain_of_thought)
    if span is not None:
        strict = MatchPolicy(numeric_tolerance=0.0)
        if not answers_match(parse_answer(span), final, strict):
            issues.append(
                Issue(
                    code="cot_answer_mismatch",
                    message=f"cot answer {span!r} does not match final_answer "
                    f"{record.final_answer!r}",
                    record_id=rid,
                )
            )

    if record.question_type != "unanswerable" and final.kind is AnswerKind.UNANSWERABLE:
        issues.append(
            Issue(
                code="unanswerable_inconsistency",
                message="final_answer is the unanswerable sentinel but question_type "
                f"is {record.question_type!r}",
                record_id=rid,
            )
        )

    return issues


def dataset_stats(records: Sequence[QARecord]) -> DatasetStats:
    """Histograms and chain-of-thought token statistics.

    Token counts use whitespace splitting, which is deterministic and
    dependency-free; absolute counts therefore differ from any particular
    model tokenizer.
    """
    if not records:
        raise ValueError("dataset_stats requires at least one record")
    answer_types = Counter(
        classify_answer_type(parse_answer(r.final_answer)).value for r in records
    )
    question_types = Counter(r.question_type for r in records)
    counts = sorted(len(r.chain_of_thought.split()) for r in records)
    n = len(counts)
    mid = n // 2
    median = float(counts[mid]) if n % 2 else (counts[mid - 1] + counts[mid]) / 2
    stats = {
        "min": float(counts[0]),
        "max": float(counts[-1]),
        "median": float(median),
        "mean": sum(counts) / n,
    }
    return DatasetStats(
        n_records=n,
        answer_type_histogram=dict(answer_types),
        question_type_histogram=dict(question_types),
        cot_token_stats=stats,
        unanswerable_fraction=answer_types.get("unanswerable", 0) / n,
    )


def _largest_remainder_allocation(
    sizes: Sequence[int], target: int
) -> list[int]:
    """Proportional integer allocation that sums to ``target`` exactly.

    Integer arithmetic throughout: base share ``floor(n_s * T / N)`` plus
    one extra for the largest remainders, ties broken by stratum order.
    """
    total = sum(sizes)
    base = [(n_s * target) // total for n_s in sizes]
    remainders = [(n_s * target) % total for n_s in sizes]
    leftover = target - sum(base)
    order = sorted(range(len(sizes)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def sample_subset(records: Sequence[QARecord], spec: SubsetSpec) -> list[QARecord]:
    """Stratified sample with proportional largest-remainder allocation.

    Within each stratum, sampling is uniform without replacement. The
    output is ordered by stratum (first-appearance order), then by source
    order, and is fully determined by the seed.
    """
    if spec.target_size > len(records):
        raise ValueError(
            f"target_size {spec.target_size} exceeds dataset size {len(records)}"
        )
    strata: dict[str, list[int]] = {}
    for idx, record in enumerate(records):
        key = getattr(record, spec.strata_key, None)
        if key is None:
            raise ValueError(f"records lack strata key {spec.strata_key!r}")
        strata.setdefault(str(key), []).append(idx)

    sizes = [len(v) for v in strata.values()]
    allocations = _largest_remainder_allocation(sizes, spec.target_size)

    rng = np.random.Generator(np.random.Philox(spec.seed))
    chosen: list[QARecord] = []
    for indices, quota in zip(strata.values(), allocations):
        if quota == 0:
            continue
        picked = rng.choice(len(indices), size=quota, replace=False)
        for pos in sorted(int(p) for p in picked):
            chosen.append(records[indices[pos]])
    return chosen


def subset_allocations(
    records: Sequence[QARecord], spec: SubsetSpec
) -> dict[str, int]:
    """Per-stratum allocation for a subset spec, for manifests."""
    strata: dict[str, int] = {}
    for record in records:
        key = str(getattr(record, spec.strata_key))
        strata[key] = strata.get(key, 0) + 1
    allocs = _largest_remainder_allocation(list(strata.values()), spec.target_size)
    return dict(zip(strata.keys(), allocs))


def build_rl_mix(
    sources: Sequence[tuple[Sequence[QARecord], int]], seed: int
) -> list[QARecord]:
    """Combine sources into a training mix and shuffle globally.

    A source whose quota equals its size passes through whole; otherwise a
    seeded uniform sample without replacement of ``quota`` records is
    taken. Records keep their ``source`` tags.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    combined: list[QARecord] = []
    for records, quota in sources:
        if quota > len(records):
            raise ValueError(f"quota {quota} exceeds source size {len(records)}")
        if quota == len(records):
            combined.extend(records)
        elif quota > 0:
            picked = rng.choice(len(records), size=quota, replace=False)
            combined.extend(records[int(p)] for p in sorted(int(x) for x in picked))
    perm = rng.permutation(len(combined))
    return [combined[int(i)] for i in perm]
