import numpy as np
import pytest
from conftest import random_family

from drcrl.best_response import (
    MissingFailStateError,
    ampi_loss_trace,
    ampi_step,
    best_response,
    consistency_apply,
    optimality_apply,
    q_table,
    scalarize,
    scalarized_policy_value,
    solve_scalarized,
    theorem1_bound,
)
from drcrl.harness import enumerate_policy_values
from drcrl.instances import random_fail_state_cmdp
from drcrl.mdp import ContaminationSet, DeterministicPolicy, FiniteCMDP
from drcrl.robust import DEFAULT_CONFIG, robust_optimal, robust_values


def test_scalarize_examples():
    rng = np.random.default_rng(0)
    mdp = random_fail_state_cmdp(rng, 3, 2, 1, discount=0.9)
    prob = scalarize(mdp, ContaminationSet(0.2), [0.0])
    np.testing.assert_array_equal(prob.combined_reward, mdp.reward)
    assert prob.effective_discount == pytest.approx(0.72)
    assert scalarize(mdp, ContaminationSet(0.0), [0.0]).effective_discount == 0.9
    # constraints enter with a plus sign: r + lam g
    one = FiniteCMDP(1, 1, [[[1.0]]], [[1.0]], [[[0.5]]], [0.0], 0.5, [1.0])
    assert scalarize(one, ContaminationSet(0.0), [2.0]).combined_reward[0, 0] == 2.0


def test_scalarize_rejects_bad_multipliers():
    rng = np.random.default_rng(1)
    mdp = random_fail_state_cmdp(rng, 3, 2, 2)
    with pytest.raises(ValueError):
        scalarize(mdp, ContaminationSet(0.1), [1.0, -0.1])
    with pytest.raises(ValueError):
        scalarize(mdp, ContaminationSet(0.1), [1.0])


def test_requires_fail_state_under_contamination():
    mdp = FiniteCMDP(2, 1, [[[0.5, 0.5]], [[0.5, 0.5]]], [[1.0], [0.0]], [], [], 0.9, [1.0, 0.0])
    with pytest.raises(MissingFailStateError):
        best_response(mdp, ContaminationSet(0.1), [])
    best_response(mdp, ContaminationSet(0.0), [])


def test_m_zero_equals_robust_optimal():
    rng = np.random.default_rng(2)
    mdp = random_fail_state_cmdp(rng, 4, 3, 0)
    cset = ContaminationSet(0.25)
    pi, v = best_response(mdp, cset, [])
    v_rob, pi_rob = robust_optimal(mdp.reward, cset, mdp)
    assert pi == pi_rob
    np.testing.assert_allclose(v, v_rob, rtol=0, atol=1e-9)


def test_brute_force_small_instance():
    rng = np.random.default_rng(3)
    mdp = random_fail_state_cmdp(rng, 3, 2, 1)
    cset = ContaminationSet(0.1)
    vals = enumerate_policy_values(mdp, cset, DEFAULT_CONFIG)
    L = vals.R + vals.G[:, 0] * 1.0
    pi, v = best_response(mdp, cset, [1.0])
    assert L[vals.policies.index(pi)] >= L.max() - 1e-9
    # the returned value is V_r + lam V_g of that policy
    vr, vg = robust_values(pi, cset, mdp)
    np.testing.assert_allclose(v, vr + vg[0], rtol=0, atol=1e-9)


@pytest.mark.parametrize("k", range(6))
def test_best_response_optimality_property(k):
    mdp, cset = random_family(seed=500 + k, n=1)[0]
    rng = np.random.default_rng(k)
    vals = enumerate_policy_values(mdp, cset, DEFAULT_CONFIG)
    for _ in range(5):
        lam = rng.exponential(2.0, size=mdp.n_constraints)
        L = vals.R + (vals.G - mdp.thresholds) @ lam
        pi, _ = best_response(mdp, cset, lam)
        assert L[vals.policies.index(pi)] >= L.max() - 1e-6


def test_huge_multiplier_follows_constraint_signal():
    S, A = 4, 3
    rng = np.random.default_rng(4)
    mdp = random_fail_state_cmdp(rng, S, A, 1)
    g = np.zeros((1, S, A))
    g[0, :3, 2] = 1.0
    mdp = mdp.replace(constraints=g)
    pi, _ = best_response(mdp, ContaminationSet(0.1), [1e6])
    assert pi.actions[:3] == (2, 2, 2)


def test_discount_shortening_consistency():
    rng = np.random.default_rng(5)
    mdp = random_fail_state_cmdp(rng, 4, 3, 2, discount=0.9)
    lam = [0.7, 1.3]
    beta = 0.2
    pi1, v1 = best_response(mdp, ContaminationSet(beta), lam)
    short = mdp.replace(discount=mdp.discount * (1 - beta))
    pi2, v2 = best_response(short, ContaminationSet(0.0), lam)
    assert pi1 == pi2
    np.testing.assert_array_equal(v1, v2)


def test_ampi_step_special_cases():
    rng = np.random.default_rng(6)
    mdp = random_fail_state_cmdp(rng, 3, 2, 1)
    prob = scalarize(mdp, ContaminationSet(0.1), [0.5])
    v0 = np.zeros(3)
    pi, v1 = ampi_step(v0, prob, mdp, 1)
    np.testing.assert_allclose(v1, optimality_apply(v0, prob, mdp), rtol=0, atol=1e-15)
    pi, v2 = ampi_step(v0, prob, mdp, 2)
    np.testing.assert_allclose(v2, consistency_apply(consistency_apply(v0, pi, prob, mdp), pi, prob, mdp), rtol=0, atol=1e-15)
    pi, vinf = ampi_step(v0, prob, mdp, 5000)
    np.testing.assert_allclose(vinf, scalarized_policy_value(pi, prob, mdp), rtol=0, atol=1e-9)
    with pytest.raises(ValueError):
        ampi_step(v0, prob, mdp, 0)


def test_greedy_validity():
    rng = np.random.default_rng(7)
    mdp = random_fail_state_cmdp(rng, 4, 3, 1)
    prob = scalarize(mdp, ContaminationSet(0.15), [1.0])
    v = rng.normal(0, 3, 4)
    pi, _ = ampi_step(v, prob, mdp, 1)
    Tv = consistency_apply(v, pi, prob, mdp)
    for _ in range(50):
        other = DeterministicPolicy.from_array(rng.integers(3, size=4))
        assert np.all(Tv >= consistency_apply(v, other, prob, mdp) - 1e-12)


def test_theorem1_bound_examples():
    assert theorem1_bound(0, 0, 0.5, 10, 1.0) == pytest.approx(2 / 1024)
    assert theorem1_bound(0.1, 0.2, 0.8, float("inf"), 3.0) == pytest.approx((2 * 0.1 * 0.8 + 0.2) / 0.04)
    want = 2 / 1024 + (0.02 * (0.5 - 1 / 1024) + 0.01 * (1 - 1 / 1024)) / 0.25
    assert theorem1_bound(0.01, 0.01, 0.5, 10, 1.0) == pytest.approx(want, rel=1e-14)
    with pytest.raises(ValueError):
        theorem1_bound(-1, 0, 0.5, 1, 1)
    with pytest.raises(ValueError):
        theorem1_bound(0, 0, 1.0, 1, 1)


def test_ampi_losses_are_non_negative_and_bounded():
    rng = np.random.default_rng(8)
    mdp = random_fail_state_cmdp(rng, 5, 3, 1, discount=0.9)
    prob = scalarize(mdp, ContaminationSet(0.1), [2.0])
    for m_steps in (1, 2, 5):
        tr = ampi_loss_trace(prob, mdp, m_steps, 30)
        assert np.all(tr.losses >= -1e-9)
        assert np.all(tr.losses <= [theorem1_bound(0, 0, prob.effective_discount, k, tr.l0) + 1e-9 for k in range(1, 31)])


def test_q_table_greedy_matches_solver():
    rng = np.random.default_rng(9)
    mdp = random_fail_state_cmdp(rng, 4, 2, 1)
    prob = scalarize(mdp, ContaminationSet(0.3), [0.4])
    pi, v = solve_scalarized(prob, mdp)
    Q = q_table(v, prob, mdp)
    assert tuple(int(a) for a in Q.argmax(axis=1)) == pi.actions
