"""Verifiable reward signals and evaluation metrics.

Two complementary signals score a model response against a gold answer:

* a dense numeric reward ``1 / (1 + |pred - gold| / |gold|)`` that decays
  smoothly with relative error (exact-match indicator for non-numeric
  answers), and
* a binary format reward for emitting exactly one
  ``<thinking>...</thinking>`` block followed by one
  ``<answer>...</answer>`` block.

Their sum is the total scalar reward used for policy optimization.
``evaluate`` computes exact and relaxed accuracy over prediction/gold
pairs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, TextIO

from .answers import (
    Answer,
    AnswerKind,
    MatchPolicy,
    answers_match,
    classify_answer_type,
    parse_answer,
    render_answer,
)

__all__ = [
    "RewardBreakdown",
    "EvalReport",
    "error_rate",
    "cerm_reward",
    "format_reward",
    "total_reward",
    "extract_answer_span",
    "evaluate",
    "score_batch",
]

ABSOLUTE_EPSILON = 1e-6

_RESPONSE_RE = re.compile(
    r"\A<thinking>(.*?)</thinking>\s*<answer>(.+?)</answer>\Z", re.DOTALL
)
_ANSWER_TAG_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-response reward decomposition; ``total == cerm + format``."""

    cerm: float
    format: int
    total: float
    error_rate: float | None = None

    def to_dict(self) -> dict:
        d = {"cerm": self.cerm, "format": self.format, "total": self.total}
        if self.error_rate is not None:
            d["error_rate"] = self.error_rate
        return d


@dataclass
class EvalReport:
    """Accuracy summary over a batch of prediction/gold pairs."""

    n: int
    exact_accuracy: float
    relaxed_accuracy: float
    per_type_accuracy: dict[str, float]
    failures: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "exact_accuracy": self.exact_accuracy,
            "relaxed_accuracy": self.relaxed_accuracy,
            "per_type_accuracy": dict(sorted(self.per_type_accuracy.items())),
            "failures": [list(f) for f in self.failures],
        }


def error_rate(pred: float, gold: float) -> float:
    """Relative error ``|pred - gold| / |gold|``; undefined at gold = 0."""
    if gold == 0.0:
        raise ValueError("error_rate is undefined for gold = 0; use cerm_reward")
    return abs(pred - gold) / abs(gold)


def cerm_reward(
    pred: Answer, gold: Answer, absolute_epsilon: float = ABSOLUTE_EPSILON
) -> float:
    """Dense reward in [0, 1] for a parsed prediction against gold.

    Numeric pairs map relative error through ``1 / (1 + ER)``; a zero gold
    switches to absolute error (reward 1 within ``absolute_epsilon``, else
    ``1 / (1 + |pred|)``). Non-numeric answers score 1 on exact match
    under the inherited normalization, 0 otherwise.
    """
    if pred.kind is AnswerKind.NUMERIC and gold.kind is AnswerKind.NUMERIC:
        p = pred.numeric_value
        g = gold.numeric_value
        if g == 0.0:
            if abs(p) <= absolute_epsilon:  # type: ignore[arg-type]
                return 1.0
            return 1.0 / (1.0 + abs(p))  # type: ignore[arg-type]
        return 1.0 / (1.0 + error_rate(p, g))  # type: ignore[arg-type]
    policy = MatchPolicy(numeric_tolerance=0.0, absolute_epsilon=absolute_epsilon)
    return 1.0 if answers_match(pred, gold, policy) else 0.0


def format_reward(response: str) -> int:
    """1 iff the response is exactly one thinking block then one answer block.

    Leading/trailing whitespace is ignored; the answer content must be
    non-empty and no tag may repeat or nest.
    """
    s = response.strip()
    for tag in ("<thinking>", "</thinking>", "<answer>", "</answer>"):
        if s.count(tag) != 1:
            return 0
    m = _RESPONSE_RE.match(s)
    if m is None or not m.group(2).strip():
        return 0
    return 1


def extract_answer_span(response: str) -> tuple[str, int]:
    """Answer text extracted from a response, plus its format reward.

    With a valid structure the span is the answer block's content;
    otherwise the whole trimmed response stands in, so the dense reward
    stays informative on malformed outputs.
    """
    fmt = format_reward(response)
    if fmt == 1:
        return _RESPONSE_RE.match(response.strip()).group(2).strip(), fmt  # type: ignore[union-attr]
    return response.strip(), fmt


def total_reward(response: str, gold: Answer) -> RewardBreakdown:
    """Score a raw response: dense signal plus format signal."""
    span, fmt = extract_answer_span(response)
    pred = parse_answer(span)
    cerm = cerm_reward(pred, gold)
    er: float | None = None
    if pred.kind is AnswerKind.NUMERIC and gold.kind is AnswerKind.NUMERIC:
        if gold.numeric_value == 0.0:
            er = abs(pred.numeric_value)  # type: ignore[arg-type]
        else:
            er = error_rate(pred.numeric_value, gold.numeric_value)  # type: ignore[arg-type]
    return RewardBreakdown(cerm=cerm, format=fmt, total=cerm + fmt, error_rate=er)


def evaluate(
    preds: list[str], golds: list[Answer], policy: MatchPolicy
) -> EvalReport:
    """Exact and relaxed accuracy of predictions against gold answers.

    Predictions go through answer-span extraction first, so both bare
    answer strings and fully tagged responses are accepted. Exact accuracy
    uses tolerance 0 under the same case policy; per-type accuracy is the
    relaxed accuracy keyed by the gold answer's type.
    """
    if len(preds) != len(golds):
        raise ValueError(f"preds/golds length mismatch: {len(preds)} != {len(golds)}")
    if not preds:
        raise ValueError("evaluate requires at least one pair")

    exact_policy = MatchPolicy(
        numeric_tolerance=0.0,
        case_sensitive=policy.case_sensitive,
        absolute_epsilon=policy.absolute_epsilon,
    )
    n_exact = 0
    n_relaxed = 0
    per_type_hit: dict[str, int] = {}
    per_type_n: dict[str, int] = {}
    failures: list[tuple[int, str]] = []

    for i, (pred_text, gold) in enumerate(zip(preds, golds)):
        span, _ = extract_answer_span(pred_text)
        pred = parse_answer(span)
        relaxed_ok = answers_match(pred, gold, policy)
        if answers_match(pred, gold, exact_policy):
            n_exact += 1
        if relaxed_ok:
            n_relaxed += 1
        else:
            failures.append(
                (i, f"pred {render_answer(pred)!r} != gold {render_answer(gold)!r}")
            )
        type_key = classify_answer_type(gold).value
        per_type_n[type_key] = per_type_n.get(type_key, 0) + 1
        per_type_hit[type_key] = per_type_hit.get(type_key, 0) + (1 if relaxed_ok else 0)

    n = len(preds)
    return EvalReport(
        n=n,
        exact_accuracy=n_exact / n,
        relaxed_accuracy=n_relaxed / n,
        per_type_accuracy={k: per_type_hit[k] / per_type_n[k] for k in per_type_n},
        failures=failures,
    )


def score_batch(lines: Iterable[str], out: TextIO) -> int:
    """Score line-delimited ``{id, response, gold}`` records.

    Writes one ``{id, cerm, format, total}`` object per input line and
    returns the number of records scored. Malformed lines raise
    ``ValueError`` naming the line number.
    """
    count = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            resp = rec["response"]
            gold_raw = rec["gold"]
            rec_id = rec["id"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"malformed batch record at line {lineno}: {exc}") from exc
        breakdown = total_reward(str(resp), parse_answer(str(gold_raw)))
        out.write(
            json.dumps(
                {
                    "id": rec_id,
                    "cerm": breakdown.cerm,
                    "format": breakdown.format,
                    "total": breakdown.total,
                }
            )
            + "\n"
        )
        count += 1
    return count
