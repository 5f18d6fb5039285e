"""Group-relative policy optimization at desk scale.

A group of G responses is sampled per prompt, scored by a verifiable
reward function, and standardized within the group to produce advantages:

    A_i = (r_i - mean(r_1..r_G)) / std(r_1..r_G)

with population standard deviation and an all-zero fallback for
degenerate (near-constant-reward) groups. Updates apply one gradient step
of the clipped surrogate plus a ``beta``-weighted KL penalty toward a
frozen reference policy. One optimization pass per sampled group keeps
the likelihood ratios at 1, so the surrogate gradient reduces to
``-mean_i A_i * grad log pi(o_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

__all__ = [
    "Policy",
    "ResponseGroup",
    "GrpoConfig",
    "StepReport",
    "TraceRow",
    "TrainingTrace",
    "group_advantages",
    "kl_divergence",
    "clipped_surrogate",
    "sample_group",
    "grpo_update_step",
    "train_loop",
]


class Policy(Protocol):
    """Parametric sampler with log-probability and gradient capabilities."""

    family: str
    params: np.ndarray

    def sample(self, prompt: Any, rng: np.random.Generator) -> Any: ...

    def logprob(self, prompt: Any, outcome: Any) -> float: ...

    def grad_logprob(self, prompt: Any, outcome: Any) -> np.ndarray: ...

    def kl_to(self, other: "Policy") -> float: ...

    def kl_grad_to(self, other: "Policy") -> np.ndarray: ...

    def summary(self) -> str: ...


@dataclass
class ResponseGroup:
    """G sampled responses for one prompt, with rewards and advantages."""

    prompt_id: int
    responses: list[Any]
    old_logprobs: list[float]
    rewards: list[float] | None = None
    advantages: list[float] | None = None

    def __post_init__(self) -> None:
        if len(self.responses) < 2:
            raise ValueError("a response group needs at least 2 responses")
        if len(self.old_logprobs) != len(self.responses):
            raise ValueError("old_logprobs length must match responses")

    @property
    def size(self) -> int:
        return len(self.responses)


@dataclass(frozen=True)
class GrpoConfig:
    """Hyperparameters for a training run; fully determines it with the seed."""

    steps: int
    seed: int
    group_size: int = 8
    learning_rate: float = 2.0
    kl_beta: float = 0.04
    clip_epsilon: float = 0.2
    degenerate_std_epsilon: float = 1e-8
    eval_interval: int = 100

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be nonnegative")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if self.degenerate_std_epsilon <= 0:
            raise ValueError("degenerate_std_epsilon must be positive")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")


@dataclass(frozen=True)
class StepReport:
    """Outcome of one update step."""

    step: int
    mean_reward: float
    kl: float
    grad_norm: float
    surrogate_grad_norm: float
    degenerate: bool


@dataclass(frozen=True)
class TraceRow:
    step: int
    mean_reward: float
    mean_kl: float
    policy_summary: str


@dataclass
class TrainingTrace:
    """Per-interval training records, serializable as a CSV table."""

    rows: list[TraceRow] = field(default_factory=list)

    CSV_HEADER = "step,mean_reward,mean_kl,policy_summary"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.step},{r.mean_reward!r},{r.mean_kl!r},{r.policy_summary}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @property
    def final(self) -> TraceRow:
        if not self.rows:
            raise ValueError("empty trace")
        return self.rows[-1]


def _standardize(rewards: Sequence[float], degenerate_std_epsilon: float) -> tuple[np.ndarray, bool]:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("group_advantages requires at least 2 rewards")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    std = float(r.std())  # population standard deviation
    if std < degenerate_std_epsilon:
        return np.zeros_like(r), True
    return (r - r.mean()) / std, False


def group_advantages(
    rewards: Sequence[float], degenerate_std_epsilon: float = 1e-8
) -> list[float]:
    """Within-group standardized advantages.

    Uses the population standard deviation; a group whose rewards are all
    within ``degenerate_std_epsilon`` of constant yields all-zero
    advantages instead of a division blow-up.
    """
    adv, _ = _standardize(rewards, degenerate_std_epsilon)
    return adv.tolist()


def kl_divergence(policy: Policy, reference: Policy, prompt: Any = None) -> float:
    """Exact closed-form KL(policy || reference) for the toy families."""
    del prompt  # toy families are prompt-independent
    if policy.family != reference.family:
        raise ValueError(
            f"mismatched policy families: {policy.family} vs {reference.family}"
        )
    return policy.kl_to(reference)


def clipped_surrogate(
    old_logprobs: Sequence[float],
    new_logprobs: Sequence[float],
    advantages: Sequence[float],
    clip_epsilon: float,
) -> float:
    """Negative mean of ``min(rho * A, clip(rho, 1-eps, 1+eps) * A)``.

    ``rho`` is the per-response likelihood ratio ``exp(new - old)``.
    """
    if not 0.0 < clip_epsilon < 1.0:
        raise ValueError("clip_epsilon must be in (0, 1)")
    old = np.asarray(old_logprobs, dtype=np.float64)
    new = np.asarray(new_logprobs, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if not (old.shape == new.shape == adv.shape):
        raise ValueError("old_logprobs, new_logprobs, advantages must have equal length")
    if old.size == 0:
        raise ValueError("clipped_surrogate requires at least one sample")
    rho = np.exp(new - old)
    clipped = np.clip(rho, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return float(-np.mean(np.minimum(rho * adv, clipped * adv)))


def sample_group(
    policy: Policy, prompt: Any, group_size: int, rng: np.random.Generator
) -> ResponseGroup:
    """Draw ``group_size`` i.i.d. responses with their log-probabilities."""
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    responses = [policy.sample(prompt, rng) for _ in range(group_size)]
    logprobs = [policy.logprob(prompt, o) for o in responses]
    prompt_id = getattr(prompt, "prompt_id", 0)
    return ResponseGroup(prompt_id=prompt_id, responses=responses, old_logprobs=logprobs)


def grpo_update_step(
    policy: Policy,
    reference: Policy,
    env: Any,
    config: GrpoConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> StepReport:
    """One prompt, one group, one gradient step.

    With a single optimization pass the ratios are identically 1, so the
    applied gradient is the clipped surrogate's gradient at rho = 1:
    ``-mean_i A_i * grad log pi(o_i)`` plus ``beta * grad KL``. A
    degenerate group contributes a zero surrogate gradient; the KL term
    may still move parameters.
    """
    prompt = env.next_prompt()
    group = sample_group(policy, prompt, config.group_size, rng)
    group.rewards = [float(env.score(prompt, o)) for o in group.responses]
    adv, degenerate = _standardize(group.rewards, config.degenerate_std_epsilon)
    group.advantages = adv.tolist()

    surrogate_grad = np.zeros_like(policy.params)
    if not degenerate:
        for a_i, outcome in zip(adv, group.responses):
            surrogate_grad -= a_i * policy.grad_logprob(prompt, outcome)
        surrogate_grad /= group.size

    kl_value = kl_divergence(policy, reference)
    total_grad = surrogate_grad
    if config.kl_beta > 0.0:
        total_grad = surrogate_grad + config.kl_beta * policy.kl_grad_to(reference)

    policy.params -= config.learning_rate * total_grad

    return StepReport(
        step=step,
        mean_reward=float(np.mean(group.rewards)),
        kl=kl_value,
        grad_norm=float(np.linalg.norm(total_grad)),
        surrogate_grad_norm=float(np.linalg.norm(surrogate_grad)),
        degenerate=degenerate,
    )


def train_loop(
    policy: Policy,
    reference: Policy,
    env: Any,
    config: GrpoConfig,
    on_step: Callable[[StepReport], None] | None = None,
) -> TrainingTrace:
    """Run ``config.steps`` update steps, recording a trace.

    Rows are recorded every ``eval_interval`` steps and at the final step.
    Deterministic given the config seed and the env's own seed.
    """
    if config.steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.Generator(np.random.Philox(config.seed))
    trace = TrainingTrace()
    for step in range(1, config.steps + 1):
        try:
            report = grpo_update_step(policy, reference, env, config, rng, step=step)
        except Exception as exc:
            raise RuntimeError(f"training step {step} failed: {exc}") from exc
        if on_step is not None:
            on_step(report)
        if step % config.eval_interval == 0 or step == config.steps:
            trace.rows.append(
                TraceRow(
                    step=step,
                    mean_reward=report.mean_reward,
                    mean_kl=report.kl,
                    policy_summary=policy.summary(),
                )
            )
    return trace
