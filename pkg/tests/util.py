"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately re-derive quantities through different routes
than the library (finite differences, direct enumeration, lattice search) so
every stochastic or optimized code path has a second opinion.
"""

from __future__ import annotations

import numpy as np

from morlab import PolicyParams, TabularMomdp, compute_exact_objective


def random_momdp(rng: np.random.Generator, n_states: int = 4, n_actions: int = 2,
                 n_objectives: int = 2, discounts=None) -> TabularMomdp:
    """Dense random MOMDP; Dirichlet rows keep every chain irreducible."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(0.0, 1.0, size=(n_objectives, n_states, n_actions))
    if discounts is None:
        discounts = rng.uniform(0.6, 0.95, size=n_objectives)
    init = rng.dirichlet(np.ones(n_states))
    return TabularMomdp(n_states, n_actions, n_objectives, P, R,
                        np.asarray(discounts, dtype=float), init)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int,
                  scale: float = 0.8) -> PolicyParams:
    return PolicyParams(rng.normal(0.0, scale, size=n_states * n_actions), n_states, n_actions)


def two_state_env() -> TabularMomdp:
    """Hand-built 2-state, 2-action, 2-objective fixture used across modules."""
    P = np.array([
        [[0.9, 0.1], [0.3, 0.7]],
        [[0.2, 0.8], [0.6, 0.4]],
    ])
    R = np.array([
        [[1.0, 0.2], [0.0, 0.6]],
        [[0.1, 0.9], [0.7, 0.2]],
    ])
    return TabularMomdp(2, 2, 2, P, R, np.array([0.9, 0.8]), np.array([0.6, 0.4]))


def single_chain_env(P: np.ndarray, rewards=None, discount: float = 0.9) -> TabularMomdp:
    """Wrap a bare (S, S) chain as a 1-action MOMDP."""
    S = P.shape[0]
    R = np.zeros((1, S, 1)) if rewards is None else np.asarray(rewards, dtype=float)
    init = np.full(S, 1.0 / S)
    return TabularMomdp(S, 1, R.shape[0], P[:, None, :], R, np.full(R.shape[0], discount), init)


def finite_difference_gradient(env: TabularMomdp, theta: np.ndarray, objective: int,
                               setting: str, h: float = 1e-5) -> np.ndarray:
    """Central differences of the exact objective in theta."""
    S, A = env.n_states, env.n_actions
    g = np.zeros_like(theta)
    for j in range(theta.size):
        tp = theta.copy()
        tp[j] += h
        tm = theta.copy()
        tm[j] -= h
        jp = compute_exact_objective(env, PolicyParams(tp, S, A), setting)[objective]
        jm = compute_exact_objective(env, PolicyParams(tm, S, A), setting)[objective]
        g[j] = (jp - jm) / (2.0 * h)
    return g


def grid_min_norm_1d(g1: np.ndarray, g2: np.ndarray, step: float = 1e-6) -> tuple[float, float]:
    """Brute 1-D scan of ||t g1 + (1-t) g2||^2 over t in [0, 1]."""
    ts = np.arange(0.0, 1.0 + step / 2, step)
    combos = ts[:, None] * g1[None, :] + (1.0 - ts)[:, None] * g2[None, :]
    vals = (combos ** 2).sum(axis=1)
    k = int(np.argmin(vals))
    return float(ts[k]), float(vals[k])


def lattice_min_norm(gram: np.ndarray, step: float = 1e-3) -> float:
    """Exact minimum of lam^T G lam over the simplex lattice with spacing
    ``step`` (M <= 4).

    Outer coordinates are enumerated densely; the innermost pair (x, s - x) is
    a 1-D quadratic in x, whose lattice minimum lies at a segment endpoint or
    at one of the two lattice points bracketing the unconstrained vertex, so it
    is resolved in closed form instead of being enumerated.
    """
    G = np.asarray(gram, dtype=float)
    M = G.shape[0]
    n = int(round(1.0 / step))
    if M == 1:
        return float(G[0, 0])
    if M == 2:
        return _lattice_min_tail2(G, np.zeros((1, 0)), np.array([n]), n)[0]

    if M == 3:
        outer = np.arange(n + 1, dtype=np.int64)[:, None]     # lambda_1 grid
    else:
        counts = np.arange(n + 1, 0, -1)                      # b-range size per a
        a = np.repeat(np.arange(n + 1, dtype=np.int64), counts)
        offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
        b = np.arange(counts.sum(), dtype=np.int64) - np.repeat(offsets, counts)
        outer = np.column_stack((a, b))                       # (lambda_1, lambda_2) grid
    budget = n - outer.sum(axis=1)
    vals = _lattice_min_tail2(G, outer, budget, n)
    return float(vals.min())


def _lattice_min_tail2(G: np.ndarray, outer: np.ndarray, budget: np.ndarray, n: int) -> np.ndarray:
    """Minimum over the last two lattice coordinates given fixed leading ones.

    outer: (K, M-2) integer grid counts; budget: (K,) remaining counts s for
    the final pair (x, s - x). Works in counts and rescales by 1/n at the end.
    """
    M = G.shape[0]
    K = outer.shape[0]
    lead = outer.astype(float)
    # q(x) = c2 x^2 + c1 x + c0 over x in [0, s], with lam = (lead, x, s - x)
    g_aa = G[M - 2, M - 2]
    g_bb = G[M - 1, M - 1]
    g_ab = G[M - 2, M - 1]
    s = budget.astype(float)
    c2 = g_aa + g_bb - 2.0 * g_ab
    if M > 2:
        lin_a = lead @ G[: M - 2, M - 2]
        lin_b = lead @ G[: M - 2, M - 1]
        quad_lead = ((lead @ G[: M - 2, : M - 2]) * lead).sum(axis=1)
    else:
        lin_a = lin_b = quad_lead = np.zeros(K)
    c1 = 2.0 * (lin_a - lin_b) + 2.0 * s * (g_ab - g_bb)
    c0 = quad_lead + 2.0 * s * lin_b + s * s * g_bb

    candidates = [np.zeros(K), s]
    if c2 > 0:
        vertex = -c1 / (2.0 * c2)
        lo = np.clip(np.floor(vertex), 0.0, None)
        for cand in (lo, lo + 1.0):
            candidates.append(np.clip(cand, 0.0, s))
    best = np.full(K, np.inf)
    for x in candidates:
        val = (c2 * x + c1) * x + c0
        best = np.minimum(best, val)
    return best / float(n * n)


def permute_momdp(env: TabularMomdp, perm: np.ndarray) -> TabularMomdp:
    """Relabel states by perm (new index = perm[old index])."""
    S = env.n_states
    inv = np.empty(S, dtype=np.int64)
    inv[perm] = np.arange(S)
    P = env.transition[inv][:, :, inv]
    R = env.reward[:, inv, :]
    init = env.initial_distribution[inv]
    return TabularMomdp(S, env.n_actions, env.n_objectives, P, R, env.discounts.copy(), init)


def permute_tabular_policy(policy: PolicyParams, perm: np.ndarray) -> PolicyParams:
    inv = np.empty(policy.n_states, dtype=np.int64)
    inv[perm] = np.arange(policy.n_states)
    theta = policy.theta.reshape(policy.n_states, policy.n_actions)[inv].ravel()
    return PolicyParams(theta, policy.n_states, policy.n_actions)
