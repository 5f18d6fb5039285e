"""Verifiable-rewards toolkit for chart question answering.

Answer parsing and matching, dense and binary reward signals,
group-relative policy optimization with toy environments, dataset
utilities, and a replot/QA generation pipeline orchestrator.
"""

from .answers import (
    Answer,
    AnswerKind,
    AnswerType,
    MatchPolicy,
    answers_match,
    classify_answer_type,
    parse_answer,
    render_answer,
)
from .grpo import (
    GrpoConfig,
    ResponseGroup,
    StepReport,
    TrainingTrace,
    clipped_surrogate,
    group_advantages,
    grpo_update_step,
    kl_divergence,
    sample_group,
    train_loop,
)
from .rewards import (
    EvalReport,
    RewardBreakdown,
    cerm_reward,
    error_rate,
    evaluate,
    extract_answer_span,
    format_reward,
    total_reward,
)

__version__ = "0.1.0"
