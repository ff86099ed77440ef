"""Mini-batch TD(0) policy evaluation with linear features, one weight vector
per objective, plus the exact TD fixed-point oracle."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .errors import DivergenceError, ModelError, ParameterError
from .momdp import (
    AVERAGE,
    MarkovSampler,
    TabularMomdp,
    Transition,
    check_setting,
    compute_stationary_distribution,
    expected_rewards,
    policy_transition_matrix,
    value_functions,
)
from .policy import FeatureMap, PolicyParams

_DIVERGENCE_LIMIT = 1e12
_LAMBDA_FLOOR = 1e-10


@dataclass
class CriticState:
    """Per-objective value weights and average-reward trackers."""

    weights: np.ndarray      # (M, d2)
    avg_reward: np.ndarray   # (M,) running reward-rate estimates, average setting only
    step_size: float         # beta
    batch_size: int          # samples per inner iteration
    n_iterations: int        # inner iterations per critic call

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.avg_reward = np.asarray(self.avg_reward, dtype=float)
        if self.weights.ndim != 2:
            raise ParameterError("weights must have shape (n_objectives, feature_dim)")
        if self.avg_reward.shape != (self.weights.shape[0],):
            raise ParameterError("avg_reward must have one tracker per objective")
        if not self.step_size > 0:
            raise ParameterError("critic step size must be positive")
        if self.batch_size < 1 or self.n_iterations < 1:
            raise ParameterError("batch size and iteration count must be >= 1")

    @classmethod
    def zeros(cls, n_objectives: int, feature_dim: int, step_size: float,
              batch_size: int, n_iterations: int) -> "CriticState":
        return cls(
            weights=np.zeros((n_objectives, feature_dim)),
            avg_reward=np.zeros(n_objectives),
            step_size=step_size,
            batch_size=batch_size,
            n_iterations=n_iterations,
        )


@dataclass
class TdFixedPoint:
    """Exact TD quantities for a fixed policy.

    ``A`` is stored per objective (shape (M, d2, d2)) because discounted
    objectives may carry different discount factors; in the average setting all
    slices are identical.
    """

    A: np.ndarray            # (M, d2, d2)
    b: np.ndarray            # (M, d2)
    w_star: np.ndarray       # (M, d2), solves A w + b = 0
    lambda_A: float          # uniform negative-definiteness margin of A + A^T
    r_w_bound: float         # norm bound on every w_star
    c_a: float               # strict upper bound on ||A||_F
    setting: str


def td_error_average(w: np.ndarray, mu_prev: float, transition: Transition,
                     objective: int, features: FeatureMap, step_size: float):
    """One average-setting TD error; returns (delta, updated reward tracker)."""
    r = float(transition.rewards[objective])
    mu = (1.0 - step_size) * mu_prev + step_size * r
    phi_s = features.state_vector(transition.state)
    phi_n = features.state_vector(transition.next_state)
    delta = r - mu + float(phi_n @ w) - float(phi_s @ w)
    return delta, mu


def td_error_discounted(w: np.ndarray, transition: Transition, objective: int,
                        features: FeatureMap, discount: float) -> float:
    """One discounted-setting TD error."""
    r = float(transition.rewards[objective])
    phi_s = features.state_vector(transition.state)
    phi_n = features.state_vector(transition.next_state)
    return r + discount * float(phi_n @ w) - float(phi_s @ w)


def _reward_tracker_path(rewards: np.ndarray, mu0: np.ndarray, step_size: float) -> np.ndarray:
    """Exact per-sample path of mu_t = (1-beta) mu_{t-1} + beta r_t along a batch.

    rewards: (M, D); mu0: (M,). Returns the (M, D) tracker values.
    """
    beta = step_size
    zi = ((1.0 - beta) * mu0)[:, None]
    path, _ = lfilter([beta], [1.0, -(1.0 - beta)], rewards, axis=1, zi=zi)
    return path


def run_critic(
    sampler: MarkovSampler,
    policy: PolicyParams,
    critic: CriticState,
    features: FeatureMap,
    setting: str,
    fixed_point: TdFixedPoint | None = None,
    error_trace: list | None = None,
) -> tuple[CriticState, int]:
    """Run the inner TD loop and return (updated critic, final chain state).

    Each iteration draws one batch of chained Markovian samples under the
    policy, evaluates all M TD errors against that same batch with the
    weights held fixed, then applies the averaged semi-gradient update
    w_i += (beta / D) * sum_tau delta_i * phi(s_tau). The sampler resumes from
    wherever the previous caller left the chain. When ``fixed_point`` is given,
    the squared distance sum_i ||w_i - w_i*||^2 is appended to ``error_trace``
    after every iteration.
    """
    check_setting(setting)
    env = sampler.env
    beta = critic.step_size
    D = critic.batch_size
    probs = policy.probability_matrix()
    phi = features.matrix
    w = critic.weights.copy()
    mu = critic.avg_reward.copy()
    for k in range(1, critic.n_iterations + 1):
        s_arr, a_arr, ns_arr = sampler.sample_policy_batch(probs, D)
        r = env.reward[:, s_arr, a_arr]               # (M, D)
        v_s = phi[s_arr] @ w.T                        # (D, M)
        v_n = phi[ns_arr] @ w.T
        if setting == AVERAGE:
            mu_path = _reward_tracker_path(r, mu, beta)
            delta = r - mu_path + (v_n - v_s).T
            mu = mu_path[:, -1].copy()
        else:
            delta = r + env.discounts[:, None] * v_n.T - v_s.T
        w = w + (beta / D) * (delta @ phi[s_arr])
        if not np.all(np.isfinite(w)) or np.abs(w).max() > _DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"critic weights diverged at inner iteration {k}", iteration=k
            )
        if fixed_point is not None and error_trace is not None:
            error_trace.append(float(((w - fixed_point.w_star) ** 2).sum()))
    return replace(critic, weights=w, avg_reward=mu), sampler.state


def compute_td_fixed_point(env: TabularMomdp, policy: PolicyParams,
                           features: FeatureMap, setting: str) -> TdFixedPoint:
    """Exact A, b, w* = -A^{-1} b, and the margin/bound constants.

    All expectations are enumerated over (s, a, s') weighted by
    d(s) pi(a|s) P(s'|s, a) with d the stationary distribution. ``A`` is
    oriented so that the mean TD update direction is exactly A w + b, i.e.
    A = E[phi(s) (phi(s') - phi(s))^T] (with the discount inside for the
    discounted setting); w* is then the limit the sampled critic tracks. The
    margin lambda_A and the norm bounds are the same for either orientation of
    the outer product.
    """
    check_setting(setting)
    d = compute_stationary_distribution(env, policy)
    P = policy_transition_matrix(env, policy)
    phi = features.matrix
    d2 = features.dim
    M = env.n_objectives
    weighted_phi = d[:, None] * phi
    next_phi = P @ phi                                # E[phi(s') | s]
    r_bar = expected_rewards(env, policy)             # (M, S)
    A = np.empty((M, d2, d2))
    b = np.empty((M, d2))
    if setting == AVERAGE:
        A[:] = weighted_phi.T @ (next_phi - phi)
        J = r_bar @ d
        b[:] = ((r_bar - J[:, None]) * d) @ phi
    else:
        for i in range(M):
            A[i] = weighted_phi.T @ (env.discounts[i] * next_phi - phi)
        b[:] = (r_bar * d) @ phi
    lambda_A = np.inf
    for i in range(M):
        top = np.linalg.eigvalsh(A[i] + A[i].T)[-1]
        lambda_A = min(lambda_A, -top)
    if lambda_A <= _LAMBDA_FLOOR:
        raise ModelError(
            "TD matrix is not negative definite for this (environment, policy, features) "
            f"triple: margin {lambda_A:.2e} <= {_LAMBDA_FLOOR:.0e}"
        )
    w_star = np.empty((M, d2))
    for i in range(M):
        w = np.linalg.solve(A[i], -b[i])
        w -= np.linalg.solve(A[i], A[i] @ w + b[i])   # one refinement pass
        w_star[i] = w
    r_w = (4.0 if setting == AVERAGE else 2.0) * env.r_max / lambda_A
    c_a = max(float(np.linalg.norm(A[i], "fro")) for i in range(M)) + 1e-6
    return TdFixedPoint(A=A, b=b, w_star=w_star, lambda_A=lambda_A,
                        r_w_bound=r_w, c_a=c_a, setting=setting)


def theory_critic_step(fixed_point: TdFixedPoint) -> float:
    """Largest step size permitted by the convergence analysis."""
    return min(fixed_point.lambda_A / (8.0 * fixed_point.c_a ** 2),
               4.0 / fixed_point.lambda_A)


def expected_td_update(env: TabularMomdp, policy: PolicyParams, features: FeatureMap,
                       w: np.ndarray, objective: int, setting: str) -> np.ndarray:
    """Exact enumeration of E[delta * phi(s)] at the given weights.

    In the average setting the reward tracker is held at its limit, the exact
    objective value. Zero at w = w* by the fixed-point property.
    """
    check_setting(setting)
    d = compute_stationary_distribution(env, policy)
    probs = policy.probability_matrix()
    phi = features.matrix
    values = phi @ w                               # (S,)
    next_values = np.einsum("sax,x->sa", env.transition, values)
    r = env.reward[objective]                      # (S, A)
    if setting == AVERAGE:
        r_bar = expected_rewards(env, policy)
        J = float(r_bar[objective] @ d)
        delta_bar = r - J + next_values - values[:, None]
    else:
        delta_bar = r + env.discounts[objective] * next_values - values[:, None]
    weights = d[:, None] * probs                   # (S, A)
    return ((weights * delta_bar).sum(axis=1)) @ phi


def compute_zeta_approx(env: TabularMomdp, policy: PolicyParams,
                        fixed_point: TdFixedPoint, features: FeatureMap,
                        setting: str) -> float:
    """Worst-objective stationary-weighted squared gap between the exact value
    function and its fixed-point linear approximation."""
    check_setting(setting)
    d = compute_stationary_distribution(env, policy)
    V, _ = value_functions(env, policy, setting)
    approx = fixed_point.w_star @ features.matrix.T    # (M, S)
    gaps = ((V - approx) ** 2) @ d
    return float(gaps.max())
