import io
import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartrl.answers import Answer, AnswerKind, MatchPolicy, parse_answer
from chartrl.rewards import (
    cerm_reward,
    error_rate,
    evaluate,
    extract_answer_span,
    format_reward,
    score_batch,
    total_reward,
)


def num(value: float) -> Answer:
    return Answer(kind=AnswerKind.NUMERIC, numeric_value=value)


class TestErrorRate:
    def test_identity(self):
        assert error_rate(100, 100) == 0.0

    def test_hand_values(self):
        assert error_rate(110, 100) == pytest.approx(0.1, abs=1e-15)
        assert error_rate(0, 100) == 1.0

    def test_zero_gold_is_domain_error(self):
        with pytest.raises(ValueError):
            error_rate(1.0, 0.0)


class TestCermReward:
    def test_exact_match_is_one(self):
        assert cerm_reward(num(100), num(100)) == 1.0

    def test_dense_values(self):
        assert cerm_reward(num(110), num(100)) == pytest.approx(1 / 1.1, abs=1e-15)
        assert cerm_reward(num(0), num(100)) == 0.5

    def test_non_numeric_mismatch_is_zero(self):
        assert cerm_reward(parse_answer("yes"), parse_answer("No")) == 0.0

    def test_non_numeric_match_is_one(self):
        assert cerm_reward(parse_answer("Paris"), parse_answer("paris")) == 1.0

    def test_zero_gold_fallback(self):
        assert cerm_reward(num(0.0), num(0.0)) == 1.0
        assert cerm_reward(num(1e-8), num(0.0)) == 1.0
        assert cerm_reward(num(2.0), num(0.0)) == pytest.approx(1 / 3, abs=1e-15)

    @given(
        st.floats(min_value=-1e4, max_value=1e4, allow_nan=False),
        st.floats(min_value=1.0, max_value=1e4),
        st.floats(min_value=0.01, max_value=100.0),
    )
    @settings(max_examples=200)
    def test_scale_invariance(self, pred, gold, k):
        base = cerm_reward(num(pred), num(gold))
        scaled = cerm_reward(num(k * pred), num(k * gold))
        assert scaled == pytest.approx(base, rel=1e-9)

    def test_strictly_decreasing_in_error(self):
        rewards = [cerm_reward(num(100 + d), num(100)) for d in (0, 1, 5, 20, 100)]
        assert all(a > b for a, b in zip(rewards, rewards[1:]))
        assert all(0 < r <= 1 for r in rewards)


class TestFormatReward:
    def test_canonical_structure(self):
        assert format_reward("<thinking>sum the bars</thinking> <answer>42</answer>") == 1

    def test_no_tags(self):
        assert format_reward("42") == 0

    def test_order_violation(self):
        assert format_reward("<answer>42</answer><thinking>x</thinking>") == 0

    def test_whitespace_invariance(self):
        assert format_reward("  <thinking>a</thinking>\n\n<answer>b</answer>  ") == 1

    def test_empty_answer_rejected(self):
        assert format_reward("<thinking>a</thinking> <answer>  </answer>") == 0

    def test_empty_thinking_allowed(self):
        assert format_reward("<thinking></thinking> <answer>ok</answer>") == 1

    def test_trailing_text_rejected(self):
        assert format_reward("<thinking>a</thinking> <answer>1</answer> and more") == 0

    def test_repeated_tags_rejected(self):
        assert format_reward("<thinking>a</thinking> <answer>1</answer> <answer>2</answer>") == 0
        assert format_reward("<thinking>a<thinking>b</thinking></thinking> <answer>1</answer>") == 0

    @given(st.text(max_size=40).filter(lambda s: "<" not in s))
    @settings(max_examples=100)
    def test_invariant_to_thinking_content(self, content):
        response = f"<thinking>{content}</thinking> <answer>42</answer>"
        assert format_reward(response) == 1


class TestTotalReward:
    def test_composition(self):
        breakdown = total_reward(
            "<thinking>read the bar</thinking> <answer>110</answer>", num(100)
        )
        assert breakdown.format == 1
        assert breakdown.cerm == pytest.approx(1 / 1.1, abs=1e-15)
        assert breakdown.total == breakdown.cerm + breakdown.format
        assert breakdown.error_rate == pytest.approx(0.1, abs=1e-15)

    def test_maximal(self):
        breakdown = total_reward("<thinking>x</thinking> <answer>100</answer>", num(100))
        assert breakdown.total == 2.0

    def test_fallback_extraction(self):
        breakdown = total_reward("100", num(100))
        assert breakdown.cerm == 1.0
        assert breakdown.format == 0
        assert breakdown.total == 1.0

    def test_malformed_uses_whole_response(self):
        span, fmt = extract_answer_span("<answer>110</answer>")
        assert fmt == 0
        assert span == "<answer>110</answer>"

    @given(st.floats(min_value=1, max_value=1e4), st.floats(min_value=1, max_value=1e4))
    @settings(max_examples=200)
    def test_total_is_exact_sum(self, pred, gold):
        response = f"<thinking>t</thinking> <answer>{pred}</answer>"
        breakdown = total_reward(response, num(gold))
        assert breakdown.total == breakdown.cerm + breakdown.format


class TestEvaluate:
    def test_spec_pairs(self):
        report = evaluate(
            ["104", "40"], [num(100), num(40)], MatchPolicy(numeric_tolerance=0.05)
        )
        assert report.relaxed_accuracy == 1.0
        assert report.exact_accuracy == 0.5
        assert report.n == 2

    def test_identical_pairs(self):
        report = evaluate(["7", "x"], [parse_answer("7"), parse_answer("x")], MatchPolicy())
        assert report.exact_accuracy == 1.0
        assert report.relaxed_accuracy == 1.0
        assert report.failures == []

    def test_unanswerable_pair(self):
        report = evaluate(["Unanswerable"], [parse_answer("Unanswerable")], MatchPolicy())
        assert report.exact_accuracy == 1.0

    def test_tagged_predictions_accepted(self):
        report = evaluate(
            ["<thinking>a</thinking> <answer>104</answer>"],
            [num(100)],
            MatchPolicy(numeric_tolerance=0.05),
        )
        assert report.relaxed_accuracy == 1.0

    def test_per_type_accuracy(self):
        report = evaluate(
            ["104", "no"],
            [num(100), parse_answer("yes")],
            MatchPolicy(numeric_tolerance=0.05),
        )
        assert report.per_type_accuracy == {"numeric": 1.0, "yes_no": 0.0}
        assert len(report.failures) == 1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(["1"], [num(1), num(2)], MatchPolicy())

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            evaluate([], [], MatchPolicy())

    def test_exact_never_exceeds_relaxed(self):
        import random

        rng = random.Random(7)
        preds, golds = [], []
        for _ in range(300):
            gold = rng.randrange(1, 1000)
            pred = gold * (1 + rng.uniform(-0.1, 0.1))
            preds.append(f"{pred:.3f}")
            golds.append(num(float(gold)))
        report = evaluate(preds, golds, MatchPolicy(numeric_tolerance=0.05))
        assert report.exact_accuracy <= report.relaxed_accuracy


class TestScoreBatch:
    def test_round_trip(self):
        lines = [
            json.dumps({"id": "a", "response": "<thinking>t</thinking> <answer>110</answer>", "gold": "100"}),
            json.dumps({"id": "b", "response": "100", "gold": "100"}),
        ]
        out = io.StringIO()
        assert score_batch(lines, out) == 2
        rows = [json.loads(line) for line in out.getvalue().splitlines()]
        assert rows[0]["id"] == "a"
        assert rows[0]["total"] == pytest.approx(1 + 1 / 1.1, abs=1e-12)
        assert rows[1] == {"id": "b", "cerm": 1.0, "format": 0, "total": 1.0}

    def test_malformed_line_cites_lineno(self):
        with pytest.raises(ValueError, match="line 2"):
            score_batch([json.dumps({"id": 1, "response": "x", "gold": "1"}), "{bad"], io.StringIO())


def test_cerm_oracle_equivalence():
    """Random numeric pairs against extended-precision evaluation of the formula."""
    import random

    rng = random.Random(31337)
    for _ in range(1000):
        pred = Fraction(rng.randrange(-10**6, 10**6), 1000)
        gold = Fraction(rng.randrange(1, 10**6) * rng.choice([-1, 1]), 1000)
        got = cerm_reward(num(float(pred)), num(float(gold)))
        expected = float(1 / (1 + abs(pred - gold) / abs(gold)))
        assert got == pytest.approx(expected, abs=1e-12)
