"""Random fail-state CMDP generators for tests and benchmarks."""

from __future__ import annotations

import itertools

import numpy as np

from drcrl.mdp import ContaminationSet, DeterministicPolicy, FiniteCMDP
from drcrl.robust import RobustEvalConfig, robust_values


def all_policies(n_states: int, n_actions: int):
    for acts in itertools.product(range(n_actions), repeat=n_states):
        yield DeterministicPolicy(acts)


def random_fail_state_cmdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    n_constraints: int,
    discount: float = 0.9,
    fail_prob: float = 0.1,
) -> FiniteCMDP:
    """CMDP over ``n_states`` states, the last of which is an absorbing fail state.

    Rewards and constraint signals are uniform on [0, 1] outside the fail state.
    Thresholds are zero; see :func:`with_feasible_thresholds`.
    """
    if n_states < 2:
        raise ValueError("need at least one live state besides the fail state")
    S, A, m = n_states, n_actions, n_constraints
    f = S - 1
    P = np.zeros((S, A, S))
    P[:f, :, :f] = rng.dirichlet(np.ones(f), size=(f, A)) * (1.0 - fail_prob)
    P[:f, :, f] = fail_prob
    P[f, :, f] = 1.0
    r = rng.uniform(0.0, 1.0, size=(S, A))
    g = rng.uniform(0.0, 1.0, size=(m, S, A))
    r[f] = 0.0
    g[:, f] = 0.0
    mu = np.zeros(S)
    mu[:f] = rng.dirichlet(np.ones(f))
    return FiniteCMDP(S, A, P, r, g, np.zeros(m), discount, mu, fail_state=f)


def policy_table(mdp: FiniteCMDP, cset: ContaminationSet, cfg: RobustEvalConfig):
    """``(policies, R, G)`` with ``R[k] = V_r(mu)`` and ``G[k] = V_g(mu)`` for every deterministic policy."""
    pols = list(all_policies(mdp.n_states, mdp.n_actions))
    R = np.empty(len(pols))
    G = np.empty((len(pols), mdp.n_constraints))
    for k, pi in enumerate(pols):
        vr, vg = robust_values(pi, cset, mdp, cfg)
        R[k] = vr @ mdp.initial_dist
        G[k] = vg @ mdp.initial_dist
    return pols, R, G


def with_feasible_thresholds(
    rng: np.random.Generator,
    mdp: FiniteCMDP,
    cset: ContaminationSet,
    margin: float = 0.05,
    cfg: RobustEvalConfig = RobustEvalConfig(tol=1e-12),
) -> FiniteCMDP:
    """Set thresholds so a random anchor policy is strictly feasible by ``margin``.

    Each threshold is drawn between the anchor's value minus ``margin`` and the
    lowest value any policy attains, biased towards the anchor so constraints
    tend to bind.
    """
    _, _, G = policy_table(mdp, cset, cfg)
    anchor = G[rng.integers(len(G))]
    lo = G.min(axis=0)
    top = anchor - margin
    frac = rng.uniform(0.6, 1.0, size=mdp.n_constraints)
    tau = np.maximum(lo, lo + frac * (top - lo))
    tau = np.minimum(tau, top)
    return mdp.replace(thresholds=tau)


# 2x2 grid laid out as
#   0 1
#   2 3
# plus the fail state 4; actions are up, right, down, left
_GRID_MOVES = (
    (0, 1, 2, 0),
    (1, 1, 3, 0),
    (0, 3, 2, 2),
    (1, 3, 3, 2),
)


def cliff_gridworld(
    threshold: float = 5.0,
    bonus: float = 2.0,
    goal: float = 0.5,
    cliff: float = 0.15,
    slip: float = 0.2,
    discount: float = 0.9,
) -> FiniteCMDP:
    """Bonus cell 1 sits on a cliff edge; goal cell 3 is safe but pays less.

    Every live state pays 1 on the single constraint signal, so the constraint
    is the discounted survival time and ``threshold`` bounds the risk taken.
    Moves succeed with probability ``1 - slip`` and otherwise stay put; in cell
    1 a fraction ``cliff`` of every transition goes to the fail state.
    """
    S, A, f = 5, 4, 4
    P = np.zeros((S, A, S))
    for s, row in enumerate(_GRID_MOVES):
        live = 1.0 - cliff if s == 1 else 1.0
        for a, dest in enumerate(row):
            P[s, a, dest] += live * (1.0 - slip)
            P[s, a, s] += live * slip
            P[s, a, f] += 1.0 - live
    P[f, :, f] = 1.0
    r = np.zeros((S, A))
    r[1] = bonus
    r[3] = goal
    g = np.zeros((1, S, A))
    g[0, :f] = 1.0
    mu = np.zeros(S)
    mu[0] = 1.0
    return FiniteCMDP(S, A, P, r, g, [threshold], discount, mu, fail_state=f)
