import numpy as np
import pytest

from chartrl.answers import AnswerKind
from chartrl.grpo import GrpoConfig
from chartrl.simlab import (
    CategoricalPolicy,
    CompareConfig,
    GaussianMeanPolicy,
    compare_reward_schemes,
    make_categorical_env,
    make_numeric_env,
    run_numeric_training,
)


class TestNumericEnv:
    def test_empty_interval_rejected(self):
        with pytest.raises(ValueError):
            make_numeric_env((150, 50), sigma=10.0)

    def test_bad_sigma_rejected(self):
        with pytest.raises(ValueError):
            make_numeric_env((50, 150), sigma=0.0)

    def test_gold_inside_range(self):
        env = make_numeric_env((50, 150), sigma=10.0, seed=7)
        assert env.gold.kind is AnswerKind.NUMERIC
        assert 50 <= env.gold.numeric_value <= 150

    def test_cerm_rewards_in_unit_interval(self):
        env = make_numeric_env((50, 150), sigma=10.0, reward="cerm", seed=0)
        prompt = env.next_prompt()
        rng = np.random.Generator(np.random.Philox(0))
        rewards = [env.score(prompt, float(rng.uniform(-500, 500))) for _ in range(200)]
        assert all(0 < r <= 1 for r in rewards)

    def test_binary_rewards_almost_surely_zero(self):
        env = make_numeric_env((50, 150), sigma=10.0, reward="binary_exact", seed=0)
        prompt = env.next_prompt()
        policy = GaussianMeanPolicy(mu=prompt.gold_value, sigma=10.0)
        rng = np.random.Generator(np.random.Philox(0))
        rewards = [env.score(prompt, policy.sample(prompt, rng)) for _ in range(500)]
        assert rewards == [0.0] * 500

    def test_cerm_plus_format_shifts_by_one(self):
        dense = make_numeric_env((50, 150), sigma=10.0, reward="cerm", seed=2)
        both = make_numeric_env((50, 150), sigma=10.0, reward="cerm_plus_format", seed=2)
        prompt = dense.next_prompt()
        prompt_b = both.next_prompt()
        assert prompt.gold == prompt_b.gold
        for outcome in (60.0, 99.5, 142.0):
            assert both.score(prompt_b, outcome) == pytest.approx(
                dense.score(prompt, outcome) + 1.0, abs=1e-12
            )

    def test_same_seed_identical_prompt_stream(self):
        a = make_numeric_env((50, 150), sigma=10.0, seed=9)
        b = make_numeric_env((50, 150), sigma=10.0, seed=9)
        for _ in range(5):
            pa, pb = a.next_prompt(), b.next_prompt()
            assert pa.prompt_id == pb.prompt_id
            assert pa.gold == pb.gold

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError):
            make_numeric_env((50, 150), sigma=10.0, reward="bogus")  # type: ignore[arg-type]


class TestCategoricalEnv:
    def test_k_validation(self):
        with pytest.raises(ValueError):
            make_categorical_env(1)

    def test_uniform_policy_expected_reward(self):
        env = make_categorical_env(4, seed=0)
        prompt = env.next_prompt()
        policy = CategoricalPolicy(logits=[0.0] * 4)
        expected = sum(
            p * env.score(prompt, k) for k, p in enumerate(policy.probs())
        )
        assert expected == pytest.approx(0.25, abs=1e-12)

    def test_concentrated_policy_reward_near_one(self):
        env = make_categorical_env(2, seed=1)
        prompt = env.next_prompt()
        correct = int(env.gold.text_value)
        logits = [0.0, 0.0]
        logits[correct] = 20.0
        policy = CategoricalPolicy(logits=logits)
        expected = sum(p * env.score(prompt, k) for k, p in enumerate(policy.probs()))
        assert expected == pytest.approx(1.0, abs=1e-8)

    def test_same_seed_identical_correct_option(self):
        golds = {make_categorical_env(5, seed=3).gold.text_value for _ in range(4)}
        assert len(golds) == 1

    def test_schemes_coincide(self):
        for scheme in ("cerm", "binary_exact"):
            env = make_categorical_env(3, reward=scheme, seed=4)
            prompt = env.next_prompt()
            correct = int(env.gold.text_value)
            for k in range(3):
                assert env.score(prompt, k) == (1.0 if k == correct else 0.0)


class TestPolicies:
    def test_gaussian_validation(self):
        with pytest.raises(ValueError):
            GaussianMeanPolicy(mu=0.0, sigma=-1.0)

    def test_categorical_validation(self):
        with pytest.raises(ValueError):
            CategoricalPolicy(logits=[0.0])

    def test_categorical_probs_sum_to_one(self):
        policy = CategoricalPolicy(logits=[3.0, -2.0, 0.5, 100.0])
        assert policy.probs().sum() == pytest.approx(1.0, abs=1e-12)

    def test_clone_is_independent(self):
        policy = GaussianMeanPolicy(mu=1.0, sigma=2.0)
        ref = policy.clone()
        policy.params[0] = 99.0
        assert ref.params[0] == 1.0


class TestMonteCarloGradient:
    def test_mc_matches_quadrature_at_probe_points(self):
        """REINFORCE estimate of d/dmu E[reward] vs dense quadrature, within 5%."""
        gold, sigma = 100.0, 10.0

        def reward(x):
            return 1.0 / (1.0 + np.abs(x - gold) / abs(gold))

        rng = np.random.Generator(np.random.Philox(12345))
        for mu in (75.0, 90.0, 120.0):
            xs = np.linspace(mu - 9 * sigma, mu + 9 * sigma, 400_001)
            density = np.exp(-0.5 * ((xs - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
            quad = np.trapezoid(reward(xs) * density * (xs - mu) / sigma**2, xs)

            samples = mu + sigma * rng.standard_normal(4_000_000)
            mc = float(np.mean(reward(samples) * (samples - mu) / sigma**2))
            assert abs(mc - quad) / abs(quad) < 0.05


class TestCompareRewardSchemes:
    def _config(self, steps=400, seed=0):
        return CompareConfig(
            grpo=GrpoConfig(steps=steps, seed=seed, group_size=8, learning_rate=2.0)
        )

    def test_dense_beats_sparse(self):
        report = compare_reward_schemes(self._config(steps=800))
        assert report.cerm.final_rel_error < report.binary_exact.final_rel_error
        assert report.binary_exact.degenerate_fraction == 1.0
        assert report.binary_exact.max_surrogate_grad_norm == 0.0

    def test_reproducible_byte_for_byte(self):
        a = compare_reward_schemes(self._config())
        b = compare_reward_schemes(self._config())
        assert a.to_summary_json() == b.to_summary_json()
        assert a.cerm.trace.to_csv() == b.cerm.trace.to_csv()

    def test_sparse_run_never_moves(self):
        result = run_numeric_training(self._config(steps=100), "binary_exact")
        assert result.final_mu == 60.0  # stuck at the initial mean
        assert result.final_kl == 0.0


class TestKlAnchoring:
    def test_beta_grid_non_increasing_final_kl(self):
        finals = []
        for beta in (0.0, 0.01, 0.1, 1.0):
            kls = []
            for seed in range(5):
                config = CompareConfig(
                    grpo=GrpoConfig(
                        steps=300, seed=seed, group_size=8, learning_rate=2.0, kl_beta=beta
                    )
                )
                kls.append(run_numeric_training(config, "cerm").final_kl)
            finals.append(float(np.mean(kls)))
        inversions = [max(0.0, b - a) for a, b in zip(finals, finals[1:])]
        assert sum(1 for v in inversions if v > 0) <= 1
        assert all(v <= 1e-3 for v in inversions)
