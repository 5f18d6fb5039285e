"""Parsing and comparison of final answers.

Raw answer strings are classified into a small set of typed answers
(numeric, text, yes/no, list, option label, unanswerable) and compared
under exact or tolerance-based semantics. Parsing is total: anything that
does not fit a more specific shape falls back to free text.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

__all__ = [
    "Answer",
    "AnswerKind",
    "AnswerType",
    "MatchPolicy",
    "parse_answer",
    "answers_match",
    "classify_answer_type",
    "render_answer",
]

# Both sentinels appear in real data for abstention answers; they normalize
# to the same kind.
_UNANSWERABLE_TOKENS = frozenset({"unanswerable", "not applicable"})

_ROMAN_TOKENS = frozenset({"i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x"})

_CURRENCY_CHARS = "$€£"  # $, euro, pound


class AnswerKind(enum.Enum):
    NUMERIC = "numeric"
    TEXT = "text"
    YES_NO = "yes_no"
    LIST = "list"
    OPTION = "option"
    UNANSWERABLE = "unanswerable"


class AnswerType(enum.Enum):
    """Answer taxonomy used for per-type evaluation and dataset stats."""

    NUMERIC = "numeric"
    TEXTUAL = "textual"
    YES_NO = "yes_no"
    LIST = "list"
    OPTION = "option"
    UNANSWERABLE = "unanswerable"


@dataclass(frozen=True)
class Answer:
    """A parsed, normalized final answer.

    Exactly one payload is populated, matching ``kind`` (unanswerable
    carries none). ``raw`` preserves the original input verbatim and does
    not participate in equality.
    """

    kind: AnswerKind
    numeric_value: float | None = None
    text_value: str | None = None
    elements: tuple["Answer", ...] | None = None
    raw: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        payloads = [
            self.numeric_value is not None,
            self.text_value is not None,
            self.elements is not None,
        ]
        if self.kind is AnswerKind.NUMERIC:
            if payloads != [True, False, False]:
                raise ValueError("numeric answer must carry only numeric_value")
            if not math.isfinite(self.numeric_value):  # type: ignore[arg-type]
                raise ValueError("numeric_value must be finite")
        elif self.kind in (AnswerKind.TEXT, AnswerKind.YES_NO, AnswerKind.OPTION):
            if payloads != [False, True, False]:
                raise ValueError(f"{self.kind.value} answer must carry only text_value")
        elif self.kind is AnswerKind.LIST:
            if payloads != [False, False, True]:
                raise ValueError("list answer must carry only elements")
            if any(e.kind is AnswerKind.LIST for e in self.elements):  # type: ignore[union-attr]
                raise ValueError("list elements must not be lists (one nesting level)")
        else:  # UNANSWERABLE
            if any(payloads):
                raise ValueError("unanswerable answer carries no payload")


@dataclass(frozen=True)
class MatchPolicy:
    """Comparison policy: relative tolerance for numerics, case handling for text.

    ``absolute_epsilon`` takes over when the gold value is zero, where
    relative error is undefined.
    """

    numeric_tolerance: float = 0.05
    case_sensitive: bool = False
    absolute_epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 <= self.numeric_tolerance < 1.0:
            raise ValueError("numeric_tolerance must be in [0, 1)")
        if self.absolute_epsilon <= 0.0:
            raise ValueError("absolute_epsilon must be positive")


def _coerce_numeric(text: str) -> float | None:
    """Numeric value of a string after separator/unit stripping, else None.

    Commas and currency symbols are removed, a trailing percent sign is
    dropped without rescaling ("17%" -> 17.0). Non-finite values are
    rejected so every numeric answer stays finite.
    """
    s = text.strip()
    if not s:
        return None
    if s.endswith("%"):
        s = s[:-1].strip()
    s = s.translate({ord(c): None for c in "," + _CURRENCY_CHARS}).strip()
    if not s:
        return None
    # float() accepts "nan"/"inf" and underscore separators; neither is a
    # chart answer.
    if "_" in s or re.search(r"[a-df-zA-DF-Z]", s):
        return None
    try:
        value = float(s)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _parse_scalar(raw: str) -> Answer:
    """Classify one non-list answer string."""
    stripped = raw.strip()
    lowered = stripped.lower()

    if lowered in _UNANSWERABLE_TOKENS:
        return Answer(kind=AnswerKind.UNANSWERABLE, raw=raw)

    numeric = _coerce_numeric(stripped)
    if numeric is not None:
        return Answer(kind=AnswerKind.NUMERIC, numeric_value=numeric, raw=raw)

    if lowered in ("yes", "no"):
        return Answer(kind=AnswerKind.YES_NO, text_value=lowered, raw=raw)

    if len(lowered) == 1 and lowered.isalpha():
        return Answer(kind=AnswerKind.OPTION, text_value=lowered, raw=raw)
    if lowered in _ROMAN_TOKENS:
        return Answer(kind=AnswerKind.OPTION, text_value=lowered, raw=raw)

    return Answer(kind=AnswerKind.TEXT, text_value=lowered, raw=raw)


def parse_answer(raw: str) -> Answer:
    """Parse a raw answer string into a typed, normalized :class:`Answer`.

    Classification priority: unanswerable sentinel, bracketed list,
    numeric (separators, currency symbols and a trailing percent sign are
    stripped; percents keep their whole value), yes/no, single option
    label (one letter or a roman numeral token), free text. Total
    function: malformed bracket lists fall back to text.
    """
    stripped = raw.strip()
    if stripped.startswith("[") and stripped.endswith("]") and len(stripped) >= 2:
        inner = stripped[1:-1]
        if "[" not in inner and "]" not in inner:
            if inner.strip() == "":
                return Answer(kind=AnswerKind.LIST, elements=(), raw=raw)
            parts = inner.split(",")
            if all(p.strip() for p in parts):
                elements = tuple(_parse_scalar(p) for p in parts)
                return Answer(kind=AnswerKind.LIST, elements=elements, raw=raw)
        # malformed (nested brackets or empty items): treat as free text
    return _parse_scalar(raw)


def _numbers_match(pred: float, gold: float, policy: MatchPolicy) -> bool:
    if gold == 0.0:
        return abs(pred) <= policy.absolute_epsilon
    return abs(pred - gold) / abs(gold) <= policy.numeric_tolerance


def _as_numeric(answer: Answer) -> float | None:
    """Numeric view of an answer, coercing text-like payloads if possible."""
    if answer.kind is AnswerKind.NUMERIC:
        return answer.numeric_value
    if answer.kind in (AnswerKind.TEXT, AnswerKind.OPTION):
        return _coerce_numeric(answer.text_value or "")
    return None


def _text_key(answer: Answer, policy: MatchPolicy) -> str:
    if policy.case_sensitive:
        # raw is empty for programmatically built answers; fall back to the
        # normalized payload rather than comparing empty strings.
        return answer.raw.strip() if answer.raw else (answer.text_value or "")
    return answer.text_value or ""


def answers_match(pred: Answer, gold: Answer, policy: MatchPolicy) -> bool:
    """Directional comparison of a predicted answer against gold.

    The second argument is always the gold answer: numeric tolerance is
    relative to it. Numeric/text cross-kind pairs are compared after
    numeric coercion of the text side; text-like kinds (text, yes/no,
    option) compare by string equality under the case policy.
    """
    if gold.kind is AnswerKind.UNANSWERABLE or pred.kind is AnswerKind.UNANSWERABLE:
        return pred.kind is AnswerKind.UNANSWERABLE and gold.kind is AnswerKind.UNANSWERABLE

    if gold.kind is AnswerKind.LIST or pred.kind is AnswerKind.LIST:
        if pred.kind is not AnswerKind.LIST or gold.kind is not AnswerKind.LIST:
            return False
        if len(pred.elements) != len(gold.elements):  # type: ignore[arg-type]
            return False
        return all(
            answers_match(p, g, policy)
            for p, g in zip(pred.elements, gold.elements)  # type: ignore[arg-type]
        )

    if gold.kind is AnswerKind.NUMERIC or pred.kind is AnswerKind.NUMERIC:
        pred_num = _as_numeric(pred)
        gold_num = _as_numeric(gold)
        if pred_num is None or gold_num is None:
            return False
        return _numbers_match(pred_num, gold_num, policy)

    # both text-like (text / yes_no / option)
    return _text_key(pred, policy) == _text_key(gold, policy)


_KIND_TO_TYPE = {
    AnswerKind.NUMERIC: AnswerType.NUMERIC,
    AnswerKind.TEXT: AnswerType.TEXTUAL,
    AnswerKind.YES_NO: AnswerType.YES_NO,
    AnswerKind.LIST: AnswerType.LIST,
    AnswerKind.OPTION: AnswerType.OPTION,
    AnswerKind.UNANSWERABLE: AnswerType.UNANSWERABLE,
}


def classify_answer_type(gold: Answer) -> AnswerType:
    """Map a parsed answer to its coarse type for histograms and reports."""
    return _KIND_TO_TYPE[gold.kind]


def _render_numeric(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def render_answer(answer: Answer) -> str:
    """Canonical string form; ``parse_answer`` is idempotent on this."""
    if answer.kind is AnswerKind.NUMERIC:
        return _render_numeric(answer.numeric_value)  # type: ignore[arg-type]
    if answer.kind is AnswerKind.LIST:
        return "[" + ", ".join(render_answer(e) for e in answer.elements) + "]"  # type: ignore[union-attr]
    if answer.kind is AnswerKind.YES_NO:
        return "Yes" if answer.text_value == "yes" else "No"
    if answer.kind is AnswerKind.UNANSWERABLE:
        return "Unanswerable"
    return answer.text_value or ""
