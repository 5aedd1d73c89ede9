"""Best response to a fixed multiplier via the shortened-discount operator.

With a fail state the contamination adversary always routes its mass to
``s_f`` (value 0), so the robust Lagrangian operator collapses to a standard
consistency operator with discount ``gamma * (1 - beta)`` on the combined
reward ``r + lambda' g``.  Greedy policies are then exact improvement steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drcrl import kernels
from drcrl.mdp import ContaminationSet, DeterministicPolicy, FiniteCMDP
from drcrl.robust import DEFAULT_CONFIG, NonConvergenceError, RobustEvalConfig, greedy, stop_threshold


class MissingFailStateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarizedProblem:
    combined_reward: np.ndarray
    effective_discount: float
    lambda_used: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.effective_discount < 1.0:
            raise ValueError(f"effective discount {self.effective_discount!r} outside [0, 1)")


def combine(reward: np.ndarray, constraints: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``r + sum_i lam_i g_i`` with a fixed summation order."""
    out = np.array(reward, dtype=float)
    for i in range(lam.shape[0]):
        out = out + lam[i] * constraints[i]
    return out


def scalarize(mdp: FiniteCMDP, cset: ContaminationSet, lam) -> ScalarizedProblem:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape[0] != mdp.n_constraints:
        raise ValueError(f"multiplier has length {lam.shape[0]}, MDP has {mdp.n_constraints} constraints")
    if np.any(lam < 0.0):
        raise ValueError(f"multipliers must be non-negative, got {lam.tolist()}")
    c = combine(mdp.reward, mdp.constraints, lam)
    c.setflags(write=False)
    return ScalarizedProblem(c, mdp.discount * (1.0 - cset.beta), lam)


def _scale(prob: ScalarizedProblem) -> float:
    r = prob.combined_reward
    return float(np.max(np.abs(r))) / (1.0 - prob.effective_discount) if r.size else 0.0


def consistency_apply(v, policy: DeterministicPolicy, prob: ScalarizedProblem, mdp: FiniteCMDP) -> np.ndarray:
    """``(r + lambda' g)(s, pi(s)) + gamma (1 - beta) <P°[s, pi(s)], v>``."""
    idx = policy.as_array()
    states = np.arange(mdp.n_states)
    r_pi = np.ascontiguousarray(prob.combined_reward[states, idx])
    P_pi = np.ascontiguousarray(mdp.kernel[states, idx])
    return kernels.apply_policy(r_pi, P_pi, np.ascontiguousarray(v, dtype=float), prob.effective_discount, 0.0, 1)


def optimality_apply(v, prob: ScalarizedProblem, mdp: FiniteCMDP) -> np.ndarray:
    return q_table(v, prob, mdp).max(axis=1)


def q_table(v, prob: ScalarizedProblem, mdp: FiniteCMDP) -> np.ndarray:
    return kernels.q_values(prob.combined_reward, mdp.kernel, np.ascontiguousarray(v, dtype=float), prob.effective_discount, 0.0)


def scalarized_policy_value(policy: DeterministicPolicy, prob: ScalarizedProblem, mdp: FiniteCMDP, cfg: RobustEvalConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Fixed point of :func:`consistency_apply` for ``policy``."""
    idx = policy.as_array()
    states = np.arange(mdp.n_states)
    r_pi = np.ascontiguousarray(prob.combined_reward[states, idx])
    P_pi = np.ascontiguousarray(mdp.kernel[states, idx])
    stop = stop_threshold(cfg.tol, prob.effective_discount, _scale(prob))
    v, iters, change = kernels.policy_eval(r_pi, P_pi, prob.effective_discount, 0.0, stop, cfg.max_iters)
    if change > stop:
        raise NonConvergenceError("scalarized policy evaluation", iters, change)
    return v


def best_response(
    mdp: FiniteCMDP,
    cset: ContaminationSet,
    lam,
    cfg: RobustEvalConfig = DEFAULT_CONFIG,
) -> tuple[DeterministicPolicy, np.ndarray]:
    """Deterministic maximizer of ``V_r(mu) + lam' V_g(mu)`` over robust values.

    Runs value iteration on the scalarized problem; returns the greedy policy of
    the converged value together with that value.
    """
    if cset.beta > 0.0 and mdp.fail_state is None:
        raise MissingFailStateError("best response under contamination requires a fail state")
    prob = scalarize(mdp, cset, lam)
    return solve_scalarized(prob, mdp, cfg)


def solve_scalarized(prob: ScalarizedProblem, mdp: FiniteCMDP, cfg: RobustEvalConfig = DEFAULT_CONFIG):
    R = prob.combined_reward
    gamma = prob.effective_discount
    stop = stop_threshold(cfg.tol, gamma, _scale(prob))
    v, iters, change = kernels.value_iteration(R, mdp.kernel, gamma, 0.0, stop, cfg.max_iters)
    if change > stop:
        raise NonConvergenceError("best-response value iteration", iters, change)
    return greedy(kernels.q_values(R, mdp.kernel, v, gamma, 0.0)), v


def ampi_step(v, prob: ScalarizedProblem, mdp: FiniteCMDP, m_steps: int) -> tuple[DeterministicPolicy, np.ndarray]:
    """Exact greedy improvement followed by ``m_steps`` applications of the policy operator."""
    if m_steps < 1:
        raise ValueError(f"m_steps must be >= 1, got {m_steps}")
    v = np.ascontiguousarray(v, dtype=float)
    pi = greedy(q_table(v, prob, mdp))
    idx = pi.as_array()
    states = np.arange(mdp.n_states)
    r_pi = np.ascontiguousarray(prob.combined_reward[states, idx])
    P_pi = np.ascontiguousarray(mdp.kernel[states, idx])
    return pi, kernels.apply_policy(r_pi, P_pi, v, prob.effective_discount, 0.0, m_steps)


def theorem1_bound(eps_bar: float, eps_prime_bar: float, gamma_eff: float, k: int, l0: float) -> float:
    """Loss ceiling after ``k`` AMPI iterations with error bounds ``eps_bar``, ``eps_prime_bar``.

    The geometric term is taken as ``2 gamma^k l0``; ``k = inf`` gives the limit.
    """
    if min(eps_bar, eps_prime_bar, l0) < 0:
        raise ValueError("error bounds and initial loss must be non-negative")
    if not 0.0 <= gamma_eff < 1.0:
        raise ValueError(f"gamma_eff must lie in [0, 1), got {gamma_eff!r}")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    gk = 0.0 if k == float("inf") else gamma_eff**k
    return 2.0 * gk * l0 + (2.0 * eps_bar * (gamma_eff - gk) + eps_prime_bar * (1.0 - gk)) / (1.0 - gamma_eff) ** 2


@dataclass(frozen=True)
class AmpiTrace:
    losses: np.ndarray  # losses[k - 1] is the loss of the k-th greedy policy
    l0: float
    policies: tuple[DeterministicPolicy, ...]


def ampi_loss_trace(
    prob: ScalarizedProblem,
    mdp: FiniteCMDP,
    m_steps: int,
    n_iters: int,
    cfg: RobustEvalConfig = DEFAULT_CONFIG,
) -> AmpiTrace:
    """Run exact AMPI from ``v = 0`` and measure ``l_k = v^{pi*}(mu) - v^{pi_k}(mu)``.

    ``l0`` is the initial value gap ``max_s |v^{pi*}(s) - 0|``.
    """
    pi_star, _ = solve_scalarized(prob, mdp, cfg)
    v_star = scalarized_policy_value(pi_star, prob, mdp, cfg)
    mu = mdp.initial_dist
    target = float(v_star @ mu)
    v = np.zeros(mdp.n_states)
    losses, policies = [], []
    cache: dict[DeterministicPolicy, float] = {}
    for _ in range(n_iters):
        pi, v = ampi_step(v, prob, mdp, m_steps)
        if pi not in cache:
            cache[pi] = float(scalarized_policy_value(pi, prob, mdp, cfg) @ mu)
        losses.append(target - cache[pi])
        policies.append(pi)
    return AmpiTrace(np.array(losses), float(np.max(np.abs(v_star))), tuple(policies))
