"""Capped importance-sampling scores and the synthetic log generator."""

import numpy as np
import pytest

from morlab import (
    AVERAGE,
    DataError,
    LoggedDataset,
    ParameterError,
    PolicyParams,
    build_fishwood,
    compute_exact_objective,
    compute_stationary_distribution,
    generate_logged_data,
    load_logged_data,
    ncis_score,
    ncis_scores,
    save_logged_data,
    uniform_policy,
)

from util import random_momdp, random_policy


def logit_policy(probs: np.ndarray) -> PolicyParams:
    return PolicyParams(np.log(probs).ravel(), probs.shape[0], probs.shape[1])


class TestNcisScore:
    def test_hand_computed_two_records(self):
        # ratios (1, 3) capped at 2, rewards (0, 1) => (0*1 + 1*2) / (1 + 2) = 2/3
        dataset = LoggedDataset(
            states=np.array([0, 0]),
            actions=np.array([0, 1]),
            rewards=np.array([[0.0], [1.0]]),
            behavior_probs=np.array([0.25, 0.25]),
        )
        pol = logit_policy(np.array([[0.25, 0.75]]))  # ratios 0.25/0.25=1, 0.75/0.25=3
        score = ncis_score(dataset, pol, cap=2.0, objective=0)
        assert score == pytest.approx(2.0 / 3.0)

    def test_self_evaluation_is_plain_mean(self):
        rng = np.random.default_rng(0)
        env = random_momdp(rng, n_states=3, n_actions=2, n_objectives=2)
        behavior = random_policy(rng, 3, 2)
        data = generate_logged_data(env, behavior, n=500, seed=1)
        scores = ncis_scores(data, behavior, cap=10.0)
        assert np.array_equal(scores, data.rewards.mean(axis=0))

    def test_tiny_cap_with_identical_policies_still_mean(self):
        rng = np.random.default_rng(1)
        env = random_momdp(rng, n_states=3, n_actions=2, n_objectives=1)
        behavior = random_policy(rng, 3, 2)
        data = generate_logged_data(env, behavior, n=200, seed=2)
        score = ncis_score(data, behavior, cap=1e-9, objective=0)
        assert score == pytest.approx(float(data.rewards[:, 0].mean()), rel=1e-12)

    def test_cap_monotone_on_high_reward_concentrating_candidate(self):
        dataset = LoggedDataset(
            states=np.array([0, 0]),
            actions=np.array([0, 1]),
            rewards=np.array([[0.0], [1.0]]),
            behavior_probs=np.array([0.5, 0.5]),
        )
        candidate = logit_policy(np.array([[0.1, 0.9]]))  # ratio 1.8 > 1 on the rewarded record
        caps = np.linspace(0.05, 3.0, 40)
        scores = [ncis_score(dataset, candidate, cap=c, objective=0) for c in caps]
        assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))

    def test_zero_support_rejected(self):
        with pytest.raises(DataError):
            LoggedDataset(states=np.array([0]), actions=np.array([0]),
                          rewards=np.array([[1.0]]), behavior_probs=np.array([0.0]))

    def test_bad_cap_rejected(self):
        dataset = LoggedDataset(states=np.array([0]), actions=np.array([0]),
                                rewards=np.array([[1.0]]), behavior_probs=np.array([0.5]))
        pol = logit_policy(np.array([[0.5, 0.5]]))
        with pytest.raises(ParameterError):
            ncis_score(dataset, pol, cap=0.0)


class TestGeneratedLogs:
    def test_rejects_empty_request(self):
        env = build_fishwood(0.4, 0.5)
        with pytest.raises(ParameterError):
            generate_logged_data(env, uniform_policy(env), n=0, seed=0)

    def test_deterministic_under_seed(self):
        env = build_fishwood(0.4, 0.5)
        behavior = uniform_policy(env)
        d1 = generate_logged_data(env, behavior, n=300, seed=9)
        d2 = generate_logged_data(env, behavior, n=300, seed=9)
        assert np.array_equal(d1.states, d2.states)
        assert np.array_equal(d1.actions, d2.actions)
        assert np.array_equal(d1.rewards, d2.rewards)

    def test_state_frequencies_match_stationary(self):
        env = build_fishwood(0.35, 0.55)
        behavior = uniform_policy(env)
        n = 100_000
        data = generate_logged_data(env, behavior, n=n, seed=17)
        d = compute_stationary_distribution(env, behavior)
        freqs = np.bincount(data.states, minlength=env.n_states) / n
        for s in range(env.n_states):
            sigma = np.sqrt(d[s] * (1 - d[s]) / n)
            assert abs(freqs[s] - d[s]) <= 3 * sigma

    def test_behavior_probs_are_exact(self):
        env = build_fishwood(0.4, 0.5)
        rng = np.random.default_rng(3)
        behavior = random_policy(rng, env.n_states, env.n_actions)
        data = generate_logged_data(env, behavior, n=100, seed=4)
        probs = behavior.probability_matrix()
        assert np.array_equal(data.behavior_probs, probs[data.states, data.actions])

    def test_self_evaluation_converges_to_exact_objective(self):
        env = build_fishwood(0.35, 0.55)
        behavior = uniform_policy(env)
        n = 100_000
        data = generate_logged_data(env, behavior, n=n, seed=23)
        scores = ncis_scores(data, behavior, cap=10.0)
        J = compute_exact_objective(env, behavior, AVERAGE)
        # exact per-step reward variance under the stationary law
        d = compute_stationary_distribution(env, behavior)
        probs = behavior.probability_matrix()
        weights = d[:, None] * probs
        for i in range(2):
            second = float((weights * env.reward[i] ** 2).sum())
            sigma = np.sqrt(max(second - J[i] ** 2, 1e-12) / n)
            assert abs(scores[i] - J[i]) <= 3 * sigma


class TestLoggedDataIO:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        env = random_momdp(rng, n_states=3, n_actions=2, n_objectives=2)
        behavior = random_policy(rng, 3, 2)
        data = generate_logged_data(env, behavior, n=50, seed=6)
        path = tmp_path / "log.jsonl"
        save_logged_data(data, str(path))
        loaded = load_logged_data(str(path))
        assert np.array_equal(loaded.states, data.states)
        assert np.array_equal(loaded.actions, data.actions)
        assert np.allclose(loaded.rewards, data.rewards)
        assert np.allclose(loaded.behavior_probs, data.behavior_probs)

    def test_loader_rejects_bad_records(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"s": 0, "a": 0, "r": [1.0]}\n')  # missing pb
        with pytest.raises(DataError):
            load_logged_data(str(path))

    def test_loader_rejects_zero_support(self, tmp_path):
        path = tmp_path / "zero.jsonl"
        path.write_text('{"s": 0, "a": 0, "r": [1.0], "pb": 0.0}\n')
        with pytest.raises(DataError):
            load_logged_data(str(path))
