"""Environment builders, sampling, and exact chain quantities."""

import numpy as np
import pytest

from morlab import (
    AVERAGE,
    DISCOUNTED,
    MarkovSampler,
    ModelError,
    ParameterError,
    PolicyParams,
    TabularMomdp,
    build_fishwood,
    build_resource_gathering,
    compute_exact_objective,
    compute_stationary_distribution,
    load_env_json,
    policy_transition_matrix,
    save_env_json,
    uniform_policy,
)

from util import permute_momdp, permute_tabular_policy, random_momdp, random_policy, single_chain_env, two_state_env


def fixed_policy_params(probs: np.ndarray) -> PolicyParams:
    """Tabular policy whose softmax reproduces the given row-stochastic matrix."""
    return PolicyParams(np.log(probs).ravel(), probs.shape[0], probs.shape[1])


class TestBuilders:
    def test_fishwood_shape(self):
        env = build_fishwood(0.5, 0.5)
        assert env.n_objectives == 2
        assert env.n_actions == 2
        assert env.n_states == 4  # (location, produced-flag) pairs

    def test_fishwood_rejects_bad_probability(self):
        with pytest.raises(ParameterError):
            build_fishwood(0.0, 0.5)
        with pytest.raises(ParameterError):
            build_fishwood(0.5, 1.0)

    def test_fishwood_rows_stochastic(self):
        env = build_fishwood(0.3, 0.8)
        assert np.allclose(env.transition.sum(axis=2), 1.0, atol=1e-12)

    def test_fishwood_symmetric_under_relabeling(self):
        # with equal probabilities, swapping locations, actions, and objectives
        # maps the env onto itself
        env = build_fishwood(0.4, 0.4)
        state_perm = np.array([2, 3, 0, 1])
        action_perm = np.array([1, 0])
        inv = np.empty(4, dtype=int)
        inv[state_perm] = np.arange(4)
        P2 = env.transition[inv][:, action_perm][:, :, inv]
        R2 = env.reward[::-1][:, inv][:, :, action_perm]
        assert np.allclose(P2, env.transition)
        assert np.allclose(R2, env.reward)

    def test_fishwood_always_fish_reward_rate(self):
        # stationary rate of the fish objective under the always-fish policy
        fish_proba = 0.37
        env = build_fishwood(fish_proba, 0.6)
        policy = fixed_policy_params(np.array([[1 - 1e-12, 1e-12]] * 4))
        J = compute_exact_objective(env, policy, AVERAGE)
        assert J[1] == pytest.approx(fish_proba, abs=1e-9)
        assert J[0] == pytest.approx(0.0, abs=1e-9)

    def test_resource_gathering_shape(self):
        env = build_resource_gathering()
        assert env.n_objectives == 3
        assert env.n_actions == 4
        assert env.n_states <= 100
        assert env.n_states == 93  # reachable (position, flags) combinations

    def test_resource_gathering_rows_stochastic(self):
        env = build_resource_gathering()
        assert np.allclose(env.transition.sum(axis=2), 1.0, atol=1e-12)

    def test_resource_gathering_uniform_chain_ergodic(self):
        env = build_resource_gathering()
        P = policy_transition_matrix(env, uniform_policy(env))
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import connected_components
        n_comp, _ = connected_components(csr_matrix(P > 0), directed=True, connection="strong")
        assert n_comp == 1
        assert np.any(np.diag(P) > 0)  # self-loop => aperiodic

    def test_resource_gathering_reset_semantics(self):
        # every move onto the home cell from a flagged state lands flags-cleared
        env = build_resource_gathering()
        states = [tuple(s) for s in env.metadata["states"]]
        home = tuple(env.metadata["home"])
        home_cleared = states.index((*home, 0, 0))
        moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
        checked = 0
        for s, (r, c, g, d) in enumerate(states):
            if not (g or d):
                continue
            for a, (dr, dc) in enumerate(moves):
                nr = min(max(r + dr, 0), 4)
                nc = min(max(c + dc, 0), 4)
                if (nr, nc) == home:
                    assert env.transition[s, a, home_cleared] == pytest.approx(1.0)
                    checked += 1
        assert checked > 0

    def test_resource_gathering_delivery_rewards(self):
        env = build_resource_gathering()
        states = [tuple(s) for s in env.metadata["states"]]
        home = tuple(env.metadata["home"])
        # gold flag set, one step above home, moving down
        s = states.index((home[0] - 1, home[1], 1, 0))
        down = 1
        assert env.reward[1, s, down] == pytest.approx(1.0)
        assert env.reward[2, s, down] == pytest.approx(0.0)

    def test_resource_gathering_survival_reward_on_enemy_moves(self):
        env = build_resource_gathering()
        states = [tuple(s) for s in env.metadata["states"]]
        enemies = {tuple(e) for e in env.metadata["enemies"]}
        attack = env.metadata["attack_prob"]
        moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
        for s, (r, c, g, d) in enumerate(states):
            for a, (dr, dc) in enumerate(moves):
                nr = min(max(r + dr, 0), 4)
                nc = min(max(c + dc, 0), 4)
                expected = 1.0 - attack if (nr, nc) in enemies else 1.0
                assert env.reward[0, s, a] == pytest.approx(expected)


class TestValidation:
    def test_rejects_non_stochastic_rows(self):
        env = two_state_env()
        bad = env.transition.copy()
        bad[0, 0, 0] += 1e-6
        with pytest.raises(ParameterError):
            TabularMomdp(2, 2, 2, bad, env.reward, env.discounts, env.initial_distribution)

    def test_rejects_negative_rewards(self):
        env = two_state_env()
        bad = env.reward.copy()
        bad[0, 0, 0] = -0.1
        with pytest.raises(ParameterError):
            TabularMomdp(2, 2, 2, env.transition, bad, env.discounts, env.initial_distribution)

    def test_rejects_reward_above_rmax(self):
        env = two_state_env()
        bad = env.reward.copy()
        bad[0, 0, 0] = 1.5
        with pytest.raises(ParameterError):
            TabularMomdp(2, 2, 2, env.transition, bad, env.discounts, env.initial_distribution)

    def test_rejects_bad_discount(self):
        env = two_state_env()
        with pytest.raises(ParameterError):
            TabularMomdp(2, 2, 2, env.transition, env.reward, np.array([1.0, 0.9]),
                         env.initial_distribution)

    def test_json_round_trip(self, tmp_path):
        env = build_fishwood(0.3, 0.7)
        path = tmp_path / "env.json"
        save_env_json(env, str(path))
        loaded = load_env_json(str(path))
        assert loaded.n_states == env.n_states
        assert np.array_equal(loaded.transition, env.transition)
        assert np.array_equal(loaded.reward, env.reward)
        assert np.array_equal(loaded.discounts, env.discounts)
        assert loaded.metadata["kind"] == "fishwood"

    def test_json_loader_validates(self, tmp_path):
        env = build_fishwood(0.3, 0.7)
        doc = env.to_json_dict()
        doc["transition"][0][0][0] += 1e-3
        path = tmp_path / "bad.json"
        import json
        path.write_text(json.dumps(doc))
        with pytest.raises(ParameterError):
            load_env_json(str(path))


class TestSampling:
    def test_deterministic_row_is_followed(self):
        from morlab import sample_step
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = 1.0
        P[1, 0, 0] = 1.0
        R = np.zeros((1, 2, 1))
        env = TabularMomdp(2, 1, 1, P, R, np.array([0.9]), np.array([1.0, 0.0]))
        sampler = MarkovSampler(env, seed=0, initial_state=0)
        for expected in (1, 0, 1, 0):
            tr = sample_step(sampler, 0)
            assert tr.next_state == expected

    def test_transition_record_fields(self):
        env = two_state_env()
        sampler = MarkovSampler(env, seed=3, initial_state=1)
        tr = sampler.sample_step(1)
        assert tr.state == 1 and tr.action == 1
        assert np.array_equal(tr.rewards, env.reward[:, 1, 1])
        assert 0 <= tr.next_state < 2
        assert np.all((tr.rewards >= 0) & (tr.rewards <= env.r_max))

    def test_empirical_frequencies_match_binomial(self):
        P = np.array([[[0.3, 0.7]], [[0.3, 0.7]]])
        R = np.zeros((1, 2, 1))
        env = TabularMomdp(2, 1, 1, P, R, np.array([0.9]), np.array([0.5, 0.5]))
        sampler = MarkovSampler(env, seed=11, initial_state=0)
        n = 100_000
        hits = sum(sampler.sample_step(0).next_state == 0 for _ in range(n))
        sigma = np.sqrt(0.3 * 0.7 / n)
        assert abs(hits / n - 0.3) <= 3 * sigma

    def test_equal_seeds_equal_trajectories(self):
        env = two_state_env()
        rng = np.random.default_rng(5)
        actions = rng.integers(0, 2, size=200)
        s1 = MarkovSampler(env, seed=42)
        s2 = MarkovSampler(env, seed=42)
        for a in actions:
            t1 = s1.sample_step(int(a))
            t2 = s2.sample_step(int(a))
            assert (t1.state, t1.action, t1.next_state) == (t2.state, t2.action, t2.next_state)

    def test_batch_continues_the_chain(self):
        env = two_state_env()
        policy = random_policy(np.random.default_rng(0), 2, 2)
        sampler = MarkovSampler(env, seed=9)
        sampler.trace = []
        probs = policy.probability_matrix()
        sampler.sample_policy_batch(probs, 50)
        sampler.sample_policy_batch(probs, 30)
        trace = sampler.trace
        assert len(trace) == 80
        for (s, a, ns), (s2, _, _) in zip(trace, trace[1:]):
            assert ns == s2

    def test_rejects_bad_action(self):
        env = two_state_env()
        sampler = MarkovSampler(env, seed=0)
        with pytest.raises(ParameterError):
            sampler.sample_step(7)


class TestStationary:
    def test_doubly_stochastic_two_states(self):
        P = np.array([[0.4, 0.6], [0.6, 0.4]])
        env = single_chain_env(P)
        d = compute_stationary_distribution(env, uniform_policy(env))
        assert np.allclose(d, [0.5, 0.5], atol=1e-12)

    def test_two_state_balance(self):
        # dP = d  =>  d = (5/6, 1/6) for this chain
        P = np.array([[0.9, 0.1], [0.5, 0.5]])
        env = single_chain_env(P)
        d = compute_stationary_distribution(env, uniform_policy(env))
        assert np.allclose(d, [5.0 / 6.0, 1.0 / 6.0], atol=1e-12)

    def test_residual_bound_for_built_envs(self):
        rng = np.random.default_rng(2024)
        for env in (build_fishwood(0.3, 0.7), build_resource_gathering(), two_state_env()):
            for _ in range(20):
                policy = random_policy(rng, env.n_states, env.n_actions)
                d = compute_stationary_distribution(env, policy)
                P = policy_transition_matrix(env, policy)
                assert np.max(np.abs(d @ P - d)) <= 1e-10
                assert d.sum() == pytest.approx(1.0, abs=1e-12)

    def test_reducible_chain_raises(self):
        P = np.eye(2)  # two absorbing states
        env = single_chain_env(P)
        with pytest.raises(ModelError):
            compute_stationary_distribution(env, uniform_policy(env))


class TestExactObjective:
    def test_constant_reward_closed_forms(self):
        c = 0.42
        rng = np.random.default_rng(1)
        env = random_momdp(rng, n_states=3, n_actions=2, n_objectives=2)
        R = env.reward.copy()
        R[0] = c
        env = TabularMomdp(3, 2, 2, env.transition, R, env.discounts, env.initial_distribution)
        policy = random_policy(rng, 3, 2)
        j_avg = compute_exact_objective(env, policy, AVERAGE)
        assert j_avg[0] == pytest.approx(c, abs=1e-12)
        j_disc = compute_exact_objective(env, policy, DISCOUNTED)
        assert j_disc[0] == pytest.approx(c / (1 - env.discounts[0]), rel=1e-12)

    def test_fishwood_always_fish_objectives(self):
        env = build_fishwood(0.25, 0.5)
        policy = fixed_policy_params(np.array([[1 - 1e-12, 1e-12]] * 4))
        J = compute_exact_objective(env, policy, AVERAGE)
        assert J[1] == pytest.approx(0.25, abs=1e-9)   # fish rate
        assert J[0] == pytest.approx(0.0, abs=1e-9)    # wood rate

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        env = random_momdp(rng, n_states=5, n_actions=3, n_objectives=2)
        policy = random_policy(rng, 5, 3)
        perm = rng.permutation(5)
        env2 = permute_momdp(env, perm)
        policy2 = permute_tabular_policy(policy, perm)
        for setting in (AVERAGE, DISCOUNTED):
            j1 = compute_exact_objective(env, policy, setting)
            j2 = compute_exact_objective(env2, policy2, setting)
            assert np.allclose(j1, j2, atol=1e-10)
