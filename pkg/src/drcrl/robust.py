"""Robust Bellman operators and fixed points for R-contamination sets.

Under contamination level ``beta`` the inner minimization has the closed form

    min_{P in P_sa} <P, v> = (1 - beta) <P°[s, a], v> + beta * min_s' v(s')

since the adversary places all of its free mass on the lowest-valued state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drcrl import kernels
from drcrl.mdp import ContaminationSet, DeterministicPolicy, FiniteCMDP

_EPS = np.finfo(float).eps


class NonConvergenceError(RuntimeError):
    def __init__(self, what: str, iters: int, change: float):
        self.iters = iters
        self.change = change
        super().__init__(f"{what} did not converge in {iters} iterations (last change {change:.3e})")


@dataclass(frozen=True)
class RobustEvalConfig:
    tol: float = 1e-10
    max_iters: int = 100_000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol!r}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters!r}")


DEFAULT_CONFIG = RobustEvalConfig()


def stop_threshold(tol: float, modulus: float, value_scale: float) -> float:
    """Successive-change threshold that certifies an iterate within ``tol`` of the fixed point.

    For a ``modulus``-contraction, a change ``d`` bounds the distance to the fixed
    point by ``d * modulus / (1 - modulus)``. The floor keeps the loop from
    chasing rounding noise on large values.
    """
    if modulus <= 0.0:
        return tol
    thr = tol * (1.0 - modulus) / modulus
    return max(min(thr, tol), 16.0 * _EPS * max(1.0, value_scale))


def _policy_rows(policy: DeterministicPolicy, reward: np.ndarray, kernel: np.ndarray):
    idx = policy.as_array()
    states = np.arange(idx.shape[0])
    return np.ascontiguousarray(reward[states, idx], dtype=float), np.ascontiguousarray(kernel[states, idx], dtype=float)


def _value_scale(reward: np.ndarray, gamma: float) -> float:
    return float(np.max(np.abs(reward))) / (1.0 - gamma) if reward.size else 0.0


def inner_min(v, s: int, a: int, cset: ContaminationSet, mdp: FiniteCMDP) -> float:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ValueError(f"value has shape {v.shape}, expected ({mdp.n_states},)")
    b = cset.beta
    return float((1.0 - b) * (mdp.kernel[s, a] @ v) + b * v.min())


def robust_consistency_apply(v, policy: DeterministicPolicy, reward, cset: ContaminationSet, mdp: FiniteCMDP) -> np.ndarray:
    """One application of the robust policy operator ``r(s, pi(s)) + gamma * inner_min``."""
    v = np.ascontiguousarray(v, dtype=float)
    r_pi, P_pi = _policy_rows(policy, np.asarray(reward, dtype=float), mdp.kernel)
    return kernels.apply_policy(r_pi, P_pi, v, mdp.discount, cset.beta, 1)


def robust_optimality_apply(v, reward, cset: ContaminationSet, mdp: FiniteCMDP) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=float)
    Q = kernels.q_values(np.ascontiguousarray(reward, dtype=float), mdp.kernel, v, mdp.discount, cset.beta)
    return Q.max(axis=1)


def robust_policy_eval(
    policy: DeterministicPolicy,
    reward,
    cset: ContaminationSet,
    mdp: FiniteCMDP,
    cfg: RobustEvalConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Robust value of ``policy`` for ``reward`` by fixed-point iteration from zero.

    The returned iterate is within ``cfg.tol`` of the exact fixed point in sup
    norm, so it also has residual at most ``cfg.tol``.
    """
    reward = np.asarray(reward, dtype=float)
    gamma = mdp.discount
    r_pi, P_pi = _policy_rows(policy, reward, mdp.kernel)
    stop = stop_threshold(cfg.tol, gamma, _value_scale(reward, gamma))
    v, iters, change = kernels.policy_eval(r_pi, P_pi, gamma, cset.beta, stop, cfg.max_iters)
    if change > stop:
        raise NonConvergenceError("robust policy evaluation", iters, change)
    return v


def robust_values(policy: DeterministicPolicy, cset: ContaminationSet, mdp: FiniteCMDP, cfg: RobustEvalConfig = DEFAULT_CONFIG):
    """Robust objective value and the ``(m, S)`` stack of robust constraint values."""
    vr = robust_policy_eval(policy, mdp.reward, cset, mdp, cfg)
    vg = np.array([robust_policy_eval(policy, g, cset, mdp, cfg) for g in mdp.constraints]).reshape(
        mdp.n_constraints, mdp.n_states
    )
    return vr, vg


def greedy(Q: np.ndarray) -> DeterministicPolicy:
    # np.argmax returns the first maximizer, i.e. ties go to the lowest action index
    return DeterministicPolicy.from_array(np.argmax(Q, axis=1))


def robust_optimal(
    reward,
    cset: ContaminationSet,
    mdp: FiniteCMDP,
    cfg: RobustEvalConfig = DEFAULT_CONFIG,
) -> tuple[np.ndarray, DeterministicPolicy]:
    """Robust value iteration; returns the converged value and its greedy policy."""
    reward = np.ascontiguousarray(reward, dtype=float)
    gamma = mdp.discount
    stop = stop_threshold(cfg.tol, gamma, _value_scale(reward, gamma))
    v, iters, change = kernels.value_iteration(reward, mdp.kernel, gamma, cset.beta, stop, cfg.max_iters)
    if change > stop:
        raise NonConvergenceError("robust value iteration", iters, change)
    return v, greedy(kernels.q_values(reward, mdp.kernel, v, gamma, cset.beta))


def worst_case_kernel(policy: DeterministicPolicy, v, cset: ContaminationSet, mdp: FiniteCMDP) -> np.ndarray:
    """Stationary adversarial kernel for value ``v``: all free mass on ``argmin v``.

    ``policy`` documents which policy ``v`` belongs to; the kernel is the same
    for every action because the adversary only looks at ``v``.
    """
    v = np.asarray(v, dtype=float)
    target = int(np.argmin(v))
    b = cset.beta
    K = (1.0 - b) * np.array(mdp.kernel, dtype=float)
    K[:, :, target] += b
    return K


def kernel_policy_eval(
    policy: DeterministicPolicy,
    reward,
    kernel,
    gamma: float,
    cfg: RobustEvalConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Standard (non-robust) evaluation of ``policy`` under a fixed ``kernel``."""
    reward = np.asarray(reward, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    r_pi, P_pi = _policy_rows(policy, reward, kernel)
    stop = stop_threshold(cfg.tol, gamma, _value_scale(reward, gamma))
    v, iters, change = kernels.policy_eval(r_pi, P_pi, float(gamma), 0.0, stop, cfg.max_iters)
    if change > stop:
        raise NonConvergenceError("kernel policy evaluation", iters, change)
    return v


def value_iteration(reward, kernel, gamma: float, cfg: RobustEvalConfig = DEFAULT_CONFIG):
    """Standard value iteration under a fixed kernel; returns ``(v, greedy policy)``."""
    reward = np.ascontiguousarray(reward, dtype=float)
    kernel = np.ascontiguousarray(kernel, dtype=float)
    stop = stop_threshold(cfg.tol, gamma, _value_scale(reward, gamma))
    v, iters, change = kernels.value_iteration(reward, kernel, float(gamma), 0.0, stop, cfg.max_iters)
    if change > stop:
        raise NonConvergenceError("value iteration", iters, change)
    return v, greedy(kernels.q_values(reward, kernel, v, float(gamma), 0.0))
