"""The multi-objective actor-critic training loop: critic hand-off, batched
gradient estimates per objective, min-norm weighting with momentum, and the
policy ascent step, with optional exact-oracle diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .critic import (
    CriticState,
    compute_td_fixed_point,
    run_critic,
    theory_critic_step,
    _reward_tracker_path,
)
from .errors import DivergenceError, ParameterError
from .mgda import MomentumSchedule, momentum_update, solve_min_norm, uniform_weights
from .momdp import (
    AVERAGE,
    MarkovSampler,
    TabularMomdp,
    check_setting,
    compute_exact_objective,
    compute_stationary_distribution,
    expected_rewards,
)
from .policy import FeatureMap, PolicyParams, complete_feature_map, default_feature_map, exact_policy_gradient, uniform_policy

FEATURE_KINDS = ("default", "complete")


@dataclass
class GradientEstimate:
    """Per-objective sampled gradient directions and their combination."""

    per_objective: np.ndarray          # (M, d1)
    reward_mean: np.ndarray            # (M,) batch reward means
    weights: np.ndarray | None = None  # simplex weights used for the combination
    combined: np.ndarray | None = None # sum_i weights_i * per_objective_i


@dataclass
class MetricsRecord:
    """One telemetry row per actor iteration."""

    t: int
    reward_mean: np.ndarray
    grad_norm_sq: float
    lam: np.ndarray
    eta: float
    critic_err: np.ndarray | None = None   # per-objective ||w_i - w_i*||^2
    j_exact: np.ndarray | None = None      # exact objective vector at theta_t
    pareto_gap: float | None = None        # min-norm gap on exact gradients at theta_t


@dataclass
class MoacConfig:
    """Hyperparameters for one training run."""

    setting: str
    actor_iterations: int                  # T
    actor_batch_size: int                  # B
    actor_step_size: float | None          # alpha; None allowed in theory mode
    momentum: MomentumSchedule
    critic_step_size: float
    critic_iterations: int                 # N
    critic_batch_size: int                 # D
    seed: int = 0
    oracle_diagnostics: bool = False
    oracle_every: int = 10
    theory_compliant: bool = False
    lipschitz_estimate: float = 10.0
    features: str = "default"

    def __post_init__(self):
        check_setting(self.setting)
        if self.actor_iterations < 1 or self.actor_batch_size < 1:
            raise ParameterError("actor iteration and batch counts must be >= 1")
        if self.critic_iterations < 1 or self.critic_batch_size < 1:
            raise ParameterError("critic iteration and batch counts must be >= 1")
        if self.actor_step_size is None:
            if not self.theory_compliant:
                raise ParameterError("actor_step_size may be omitted only in theory-compliant mode")
            self.actor_step_size = theory_actor_step(self.lipschitz_estimate)
        if not self.actor_step_size > 0 or not self.critic_step_size > 0:
            raise ParameterError("step sizes must be positive")
        if self.oracle_every < 1:
            raise ParameterError("oracle_every must be >= 1")
        if self.features not in FEATURE_KINDS:
            raise ParameterError(f"features must be one of {FEATURE_KINDS}")
        if not isinstance(self.momentum, MomentumSchedule):
            self.momentum = MomentumSchedule.parse(str(self.momentum))


@dataclass
class MoacResult:
    """Output of one training run."""

    final_policy: PolicyParams             # theta after the last update
    sampled_policy: PolicyParams           # theta_That for a uniformly drawn That
    t_hat: int
    records: list[MetricsRecord]
    lambda_initial: np.ndarray             # lam_0 before the first momentum mix


def theory_actor_step(lipschitz_estimate: float) -> float:
    """Actor step size 1/(3 L) for a smoothness estimate L."""
    if not lipschitz_estimate > 0:
        raise ParameterError("lipschitz_estimate must be positive")
    return 1.0 / (3.0 * lipschitz_estimate)


def build_feature_map(kind: str, n_states: int) -> FeatureMap:
    if kind == "default":
        return default_feature_map(n_states)
    if kind == "complete":
        return complete_feature_map(n_states)
    raise ParameterError(f"unknown feature map kind {kind!r}")


def estimate_objective_gradients(
    sampler: MarkovSampler,
    policy: PolicyParams,
    critic_weights: np.ndarray,
    batch_size: int,
    setting: str,
    features: FeatureMap,
    mu_step: float,
) -> tuple[GradientEstimate, int]:
    """Draw one actor batch and average delta * score per objective.

    The per-sample TD errors reuse the critic's weight vectors; in the average
    setting the actor keeps its own reward trackers, started at zero for the
    batch and advanced with the actor step size. Per-sample score vectors are
    folded into per-(state, action) buckets first, so the projection onto the
    parameter space happens once per objective.
    """
    check_setting(setting)
    env = sampler.env
    M = env.n_objectives
    probs = policy.probability_matrix()
    phi = features.matrix
    s_arr, a_arr, ns_arr = sampler.sample_policy_batch(probs, batch_size)
    r = env.reward[:, s_arr, a_arr]                  # (M, B)
    v_s = phi[s_arr] @ critic_weights.T              # (B, M)
    v_n = phi[ns_arr] @ critic_weights.T
    if setting == AVERAGE:
        mu_path = _reward_tracker_path(r, np.zeros(M), mu_step)
        delta = r - mu_path + (v_n - v_s).T
    else:
        delta = r + env.discounts[:, None] * v_n.T - v_s.T
    grads = np.empty((M, policy.dim))
    bucket = np.zeros((env.n_states, env.n_actions))
    for i in range(M):
        bucket[:] = 0.0
        np.add.at(bucket, (s_arr, a_arr), delta[i])
        grads[i] = policy.score_weighted_sum(bucket / batch_size)
    estimate = GradientEstimate(per_objective=grads, reward_mean=r.mean(axis=1))
    return estimate, sampler.state


def expected_td_gradient(env: TabularMomdp, policy: PolicyParams, features: FeatureMap,
                         w: np.ndarray, objective: int, setting: str) -> np.ndarray:
    """Exact enumeration limit of the sampled gradient estimate at weights w.

    Weights (s, a) by the stationary joint law and uses the conditional TD
    error expectation; the average-setting reward tracker is held at the exact
    objective value.
    """
    check_setting(setting)
    d = compute_stationary_distribution(env, policy)
    probs = policy.probability_matrix()
    phi = features.matrix
    values = phi @ w
    next_values = np.einsum("sax,x->sa", env.transition, values)
    r = env.reward[objective]
    if setting == AVERAGE:
        J = float(expected_rewards(env, policy)[objective] @ d)
        delta_bar = r - J + next_values - values[:, None]
    else:
        delta_bar = r + env.discounts[objective] * next_values - values[:, None]
    coeff = d[:, None] * probs * delta_bar
    return policy.score_weighted_sum(coeff)


def pareto_stationarity_gap(env: TabularMomdp, policy: PolicyParams, setting: str) -> float:
    """min over simplex weights of ||sum_i lam_i grad J_i||^2 on exact gradients."""
    grads = np.stack([
        exact_policy_gradient(env, policy, i, setting) for i in range(env.n_objectives)
    ])
    _, min_norm_sq = solve_min_norm(grads)
    return min_norm_sq


def run_moac(
    env: TabularMomdp,
    config: MoacConfig,
    features: FeatureMap | None = None,
    initial_policy: PolicyParams | None = None,
) -> MoacResult:
    """Run the full training loop and return policies plus the metrics stream.

    Every iteration hands the Markov chain from the critic's inner loop to the
    actor batch and back, so one unbroken trajectory underlies the whole run;
    (seed, config) fixes the stream bit-exactly.
    """
    setting = config.setting
    if features is None:
        features = build_feature_map(config.features, env.n_states)
    policy = initial_policy if initial_policy is not None else uniform_policy(env)
    sampler = MarkovSampler(env, config.seed)
    critic = CriticState.zeros(
        env.n_objectives, features.dim,
        config.critic_step_size, config.critic_batch_size, config.critic_iterations,
    )
    if config.theory_compliant:
        fp0 = compute_td_fixed_point(env, policy, features, setting)
        limit = theory_critic_step(fp0)
        if config.critic_step_size > limit + 1e-12:
            raise ParameterError(
                f"critic step size {config.critic_step_size} exceeds the "
                f"theory-compliant bound {limit:.6g} for this environment"
            )
    lam = uniform_weights(env.n_objectives)
    lam_initial = lam.values.copy()
    thetas: list[np.ndarray] = []
    records: list[MetricsRecord] = []
    T = config.actor_iterations
    for t in range(1, T + 1):
        oracle_now = config.oracle_diagnostics and (
            t == 1 or t == T or t % config.oracle_every == 0
        )
        fp_t = compute_td_fixed_point(env, policy, features, setting) if oracle_now else None
        critic, _ = run_critic(sampler, policy, critic, features, setting)
        estimate, _ = estimate_objective_gradients(
            sampler, policy, critic.weights, config.actor_batch_size,
            setting, features, mu_step=config.actor_step_size,
        )
        lam_hat, _ = solve_min_norm(estimate.per_objective)
        eta = config.momentum.eta(t)
        lam = momentum_update(lam, lam_hat, eta)
        combined = lam.values @ estimate.per_objective
        estimate.weights = lam.values.copy()
        estimate.combined = combined
        critic_err = j_exact = None
        gap = None
        if oracle_now:
            critic_err = ((critic.weights - fp_t.w_star) ** 2).sum(axis=1)
            j_exact = compute_exact_objective(env, policy, setting)
            gap = pareto_stationarity_gap(env, policy, setting)
        records.append(MetricsRecord(
            t=t,
            reward_mean=estimate.reward_mean,
            grad_norm_sq=float(combined @ combined),
            lam=lam.values.copy(),
            eta=eta,
            critic_err=critic_err,
            j_exact=j_exact,
            pareto_gap=gap,
        ))
        thetas.append(policy.theta.copy())
        new_theta = policy.theta + config.actor_step_size * combined
        if not np.all(np.isfinite(new_theta)):
            raise DivergenceError(f"policy parameters diverged at iteration {t}", iteration=t)
        policy = replace(policy, theta=new_theta)
    t_hat = int(sampler.rng.integers(1, T + 1))
    sampled = replace(policy, theta=thetas[t_hat - 1].copy())
    return MoacResult(
        final_policy=policy,
        sampled_policy=sampled,
        t_hat=t_hat,
        records=records,
        lambda_initial=lam_initial,
    )


def estimate_gradient_lipschitz(
    env: TabularMomdp,
    setting: str,
    n_probes: int = 20,
    radius: float = 0.5,
    seed: int = 0,
) -> float:
    """Probe the smoothness constant of the exact gradients.

    Samples random parameter pairs at the given radius around random centers
    and returns the largest observed ratio ||grad J(x) - grad J(y)|| / ||x - y||
    across objectives.
    """
    check_setting(setting)
    rng = np.random.default_rng(seed)
    d1 = env.n_states * env.n_actions
    worst = 0.0
    for _ in range(n_probes):
        center = rng.normal(0.0, 1.0, size=d1)
        step = rng.normal(0.0, 1.0, size=d1)
        step *= radius / np.linalg.norm(step)
        pa = PolicyParams(center, env.n_states, env.n_actions)
        pb = PolicyParams(center + step, env.n_states, env.n_actions)
        for i in range(env.n_objectives):
            ga = exact_policy_gradient(env, pa, i, setting)
            gb = exact_policy_gradient(env, pb, i, setting)
            worst = max(worst, float(np.linalg.norm(ga - gb) / np.linalg.norm(step)))
    return worst
