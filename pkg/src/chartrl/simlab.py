"""Desk-scale environments and toy policies for reward/advantage checks.

The policies stand in for a full generative model while keeping every
term of the optimization objective live: a Gaussian with learnable mean
(fixed sigma) for numeric answers and a categorical over K options for
multiple choice. Environments carry a seeded gold answer and score
outcomes with the real reward functions, which makes the dense-vs-sparse
reward comparison an executable experiment rather than an argument.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .answers import Answer, AnswerKind, MatchPolicy, answers_match, render_answer
from .grpo import GrpoConfig, StepReport, TrainingTrace, sample_group, train_loop
from .rewards import cerm_reward, total_reward

__all__ = [
    "GaussianMeanPolicy",
    "CategoricalPolicy",
    "PromptContext",
    "Env",
    "make_numeric_env",
    "make_categorical_env",
    "sample_group",
    "CompareConfig",
    "SchemeResult",
    "ComparisonReport",
    "compare_reward_schemes",
]

RewardScheme = Literal["cerm", "binary_exact", "cerm_plus_format"]
_SCHEMES = ("cerm", "binary_exact", "cerm_plus_format")

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianMeanPolicy:
    """Gaussian over the reals with learnable mean and fixed sigma."""

    mu: float
    sigma: float

    family: str = field(default="gaussian_mean", init=False)

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        self.params = np.array([self.mu], dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(self.params[0])

    def sample(self, prompt, rng: np.random.Generator) -> float:
        return float(self.params[0] + self.sigma * rng.standard_normal())

    def logprob(self, prompt, outcome: float) -> float:
        z = (outcome - self.params[0]) / self.sigma
        return float(-0.5 * z * z - math.log(self.sigma) - 0.5 * _LOG_2PI)

    def grad_logprob(self, prompt, outcome: float) -> np.ndarray:
        return np.array([(outcome - self.params[0]) / self.sigma**2])

    def kl_to(self, other: "GaussianMeanPolicy") -> float:
        if other.family != self.family:
            raise ValueError("KL between different policy families")
        mu_p, mu_q = float(self.params[0]), float(other.params[0])
        var_p, var_q = self.sigma**2, other.sigma**2
        return float(
            math.log(other.sigma / self.sigma)
            + (var_p + (mu_p - mu_q) ** 2) / (2.0 * var_q)
            - 0.5
        )

    def kl_grad_to(self, other: "GaussianMeanPolicy") -> np.ndarray:
        return np.array([(float(self.params[0]) - float(other.params[0])) / other.sigma**2])

    def clone(self) -> "GaussianMeanPolicy":
        return GaussianMeanPolicy(mu=float(self.params[0]), sigma=self.sigma)

    def summary(self) -> str:
        return f"mu={float(self.params[0]):.6f}"

    def __repr__(self) -> str:  # params are the live state, the mu field is initial
        return f"GaussianMeanPolicy(mu={float(self.params[0])!r}, sigma={self.sigma!r})"


@dataclass
class CategoricalPolicy:
    """Categorical over K options with learnable logits."""

    logits: list[float]

    family: str = field(default="categorical_logits", init=False)

    def __post_init__(self) -> None:
        if len(self.logits) < 2:
            raise ValueError("categorical policy needs at least 2 options")
        self.params = np.asarray(self.logits, dtype=np.float64).copy()

    @property
    def k(self) -> int:
        return self.params.size

    def probs(self) -> np.ndarray:
        z = self.params - self.params.max()
        e = np.exp(z)
        return e / e.sum()

    def sample(self, prompt, rng: np.random.Generator) -> int:
        return int(rng.choice(self.k, p=self.probs()))

    def logprob(self, prompt, outcome: int) -> float:
        z = self.params - self.params.max()
        return float(z[outcome] - math.log(np.exp(z).sum()))

    def grad_logprob(self, prompt, outcome: int) -> np.ndarray:
        grad = -self.probs()
        grad[outcome] += 1.0
        return grad

    def kl_to(self, other: "CategoricalPolicy") -> float:
        if other.family != self.family:
            raise ValueError("KL between different policy families")
        if other.k != self.k:
            raise ValueError(f"mismatched outcome spaces: K={self.k} vs K={other.k}")
        p = self.probs()
        q = other.probs()
        return float(np.sum(p * (np.log(p) - np.log(q))))

    def kl_grad_to(self, other: "CategoricalPolicy") -> np.ndarray:
        p = self.probs()
        q = other.probs()
        diff = np.log(p) - np.log(q)
        kl = float(np.sum(p * diff))
        return p * (diff - kl)

    def clone(self) -> "CategoricalPolicy":
        return CategoricalPolicy(logits=self.params.tolist())

    def summary(self) -> str:
        p = self.probs()
        return f"p_max={float(p.max()):.6f}@{int(p.argmax())}"

    def __repr__(self) -> str:  # params are the live state, the logits field is initial
        return f"CategoricalPolicy(logits={self.params.tolist()!r})"


@dataclass(frozen=True)
class PromptContext:
    """One sampled prompt: an id, the gold answer, and the outcome space."""

    prompt_id: int
    gold: Answer
    space: tuple

    @property
    def gold_value(self) -> float:
        if self.gold.kind is not AnswerKind.NUMERIC:
            raise ValueError("gold is not numeric")
        return self.gold.numeric_value  # type: ignore[return-value]


class Env:
    """Seeded prompt stream with a verifiable scoring rule.

    The gold answer is drawn once from the env seed; every prompt carries
    it, so convergence of a single-parameter policy toward the gold is
    well defined. ``score`` routes through the reward functions matching
    the configured scheme.
    """

    def __init__(
        self,
        kind: Literal["numeric", "categorical"],
        scheme: RewardScheme,
        seed: int,
        gold: Answer,
        space: tuple,
        sigma: float | None = None,
    ) -> None:
        if scheme not in _SCHEMES:
            raise ValueError(f"unknown reward scheme: {scheme!r}")
        self.kind = kind
        self.scheme = scheme
        self.seed = seed
        self.gold = gold
        self.space = space
        self.sigma = sigma
        self._counter = 0

    def next_prompt(self) -> PromptContext:
        self._counter += 1
        return PromptContext(prompt_id=self._counter, gold=self.gold, space=self.space)

    def score(self, prompt: PromptContext, outcome) -> float:
        if self.kind == "categorical":
            # Both dense and binary schemes coincide on exact option match.
            return 1.0 if int(outcome) == int(prompt.gold.text_value) else 0.0
        pred = Answer(kind=AnswerKind.NUMERIC, numeric_value=float(outcome))
        if self.scheme == "cerm":
            return cerm_reward(pred, prompt.gold)
        if self.scheme == "binary_exact":
            strict = MatchPolicy(numeric_tolerance=0.0)
            return 1.0 if answers_match(pred, prompt.gold, strict) else 0.0
        # cerm_plus_format: wrap the outcome in the canonical response
        # structure so the combined signal (dense + format) stays live. The
        # +1 format shift is washed out by within-group standardization.
        response = f"<thinking>sampled</thinking> <answer>{render_answer(pred)}</answer>"
        return total_reward(response, prompt.gold).total


def make_numeric_env(
    gold_range: tuple[float, float],
    sigma: float,
    reward: RewardScheme = "cerm",
    seed: int = 0,
) -> Env:
    """Numeric environment whose prompts carry a gold real drawn from ``gold_range``."""
    lo, hi = gold_range
    if lo > hi:
        raise ValueError(f"empty gold_range: {gold_range}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    gold_value = float(rng.uniform(lo, hi))
    gold = Answer(kind=AnswerKind.NUMERIC, numeric_value=gold_value)
    return Env(
        kind="numeric",
        scheme=reward,
        seed=seed,
        gold=gold,
        space=("continuous",),
        sigma=sigma,
    )


def make_categorical_env(
    num_options: int, reward: RewardScheme = "cerm", seed: int = 0
) -> Env:
    """Categorical environment with one seeded correct option out of K."""
    if num_options < 2:
        raise ValueError("num_options must be >= 2")
    rng = np.random.Generator(np.random.Philox(seed))
    correct = int(rng.integers(0, num_options))
    gold = Answer(kind=AnswerKind.OPTION, text_value=str(correct))
    return Env(
        kind="categorical",
        scheme=reward,
        seed=seed,
        gold=gold,
        space=("categorical", num_options),
    )


@dataclass(frozen=True)
class CompareConfig:
    """Configuration for the dense-vs-sparse reward comparison."""

    grpo: GrpoConfig
    gold_range: tuple[float, float] = (50.0, 150.0)
    sigma: float = 10.0
    initial_mu: float = 60.0
    env_seed: int | None = None  # defaults to the training seed


@dataclass
class SchemeResult:
    """Outcome of one training run under one reward scheme."""

    scheme: str
    gold: float
    final_mu: float
    final_rel_error: float
    degenerate_fraction: float
    max_surrogate_grad_norm: float
    final_kl: float
    trace: TrainingTrace

    def to_summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "gold": self.gold,
            "final_mu": self.final_mu,
            "final_rel_error": self.final_rel_error,
            "degenerate_fraction": self.degenerate_fraction,
            "max_surrogate_grad_norm": self.max_surrogate_grad_norm,
            "final_kl": self.final_kl,
        }


@dataclass
class ComparisonReport:
    """Paired results for the dense (cerm) and sparse (binary) reward runs."""

    cerm: SchemeResult
    binary_exact: SchemeResult

    def to_summary_json(self) -> str:
        return json.dumps(
            {"cerm": self.cerm.to_summary(), "binary_exact": self.binary_exact.to_summary()},
            indent=2,
            sort_keys=True,
        )


def run_numeric_training(config: CompareConfig, scheme: RewardScheme) -> SchemeResult:
    """Train the Gaussian policy on the numeric env under one reward scheme."""
    env_seed = config.env_seed if config.env_seed is not None else config.grpo.seed
    env = make_numeric_env(config.gold_range, config.sigma, reward=scheme, seed=env_seed)
    policy = GaussianMeanPolicy(mu=config.initial_mu, sigma=config.sigma)
    reference = policy.clone()

    reports: list[StepReport] = []
    trace = train_loop(policy, reference, env, config.grpo, on_step=reports.append)

    gold = env.gold.numeric_value or 0.0
    final_mu = policy.mean
    rel_error = abs(final_mu - gold) / abs(gold) if gold != 0.0 else abs(final_mu)
    return SchemeResult(
        scheme=scheme,
        gold=gold,
        final_mu=final_mu,
        final_rel_error=rel_error,
        degenerate_fraction=sum(r.degenerate for r in reports) / len(reports),
        max_surrogate_grad_norm=max(r.surrogate_grad_norm for r in reports),
        final_kl=reports[-1].kl,
        trace=trace,
    )


def compare_reward_schemes(config: CompareConfig) -> ComparisonReport:
    """Run the numeric env under dense and sparse rewards with identical seeds.

    The dense run should steer the policy mean toward the gold value; exact
    match on continuous predictions is a measure-zero event, so the sparse
    run sees constant all-zero reward groups and a surrogate gradient that
    never fires.
    """
    return ComparisonReport(
        cerm=run_numeric_training(config, "cerm"),
        binary_exact=run_numeric_training(config, "binary_exact"),
    )
