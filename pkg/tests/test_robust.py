
import numpy as np
import pytest

from drcrl.instances import all_policies, random_fail_state_cmdp
from drcrl.mdp import ContaminationSet, DeterministicPolicy, FiniteCMDP
from drcrl.robust import (
    NonConvergenceError,
    RobustEvalConfig,
    inner_min,
    kernel_policy_eval,
    robust_consistency_apply,
    robust_optimal,
    robust_optimality_apply,
    robust_policy_eval,
    value_iteration,
    worst_case_kernel,
)


def random_mdp(rng, S=3, A=2, gamma=0.9):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    r = rng.uniform(0, 1, size=(S, A))
    return FiniteCMDP(S, A, P, r, [], [], gamma, np.full(S, 1 / S))


def closed_form_robust_value(mdp, pi, reward, beta):
    """V = u + g beta/(1 - g) min(u), u = (I - g(1 - beta) P_pi)^-1 r_pi; the min-term is a constant shift."""
    idx = pi.as_array()
    s = np.arange(mdp.n_states)
    P = mdp.kernel[s, idx]
    r = reward[s, idx]
    g = mdp.discount
    u = np.linalg.solve(np.eye(mdp.n_states) - g * (1 - beta) * P, r)
    return u + g * beta / (1 - g) * u.min()


def test_inner_min_examples():
    mdp = FiniteCMDP(2, 1, [[[0.5, 0.5]], [[0.5, 0.5]]], [[0], [0]], [], [], 0.9, [1, 0])
    assert inner_min([0, 10], 0, 0, ContaminationSet(0.2), mdp) == pytest.approx(4.0, abs=1e-15)
    assert inner_min([0, 10], 0, 0, ContaminationSet(0.0), mdp) == 5.0
    assert inner_min([3, 10], 0, 0, ContaminationSet(1.0), mdp) == 3.0


def test_inner_min_matches_vertex_enumeration():
    # the contamination set's extreme points are (1 - beta) P° + beta e_s'
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, S=5)
    for _ in range(20):
        v = rng.normal(size=5)
        beta = rng.uniform()
        best = min((1 - beta) * mdp.kernel[1, 0] @ v + beta * v[k] for k in range(5))
        assert inner_min(v, 1, 0, ContaminationSet(beta), mdp) == pytest.approx(best, abs=1e-12)


def test_consistency_apply_of_zero_is_reward():
    rng = np.random.default_rng(1)
    mdp = random_mdp(rng)
    pi = DeterministicPolicy((1, 0, 1))
    np.testing.assert_array_equal(robust_consistency_apply(np.zeros(3), pi, mdp.reward, ContaminationSet(0.3), mdp), mdp.reward[[0, 1, 2], [1, 0, 1]])


@pytest.mark.parametrize("beta", [0.0, 0.1, 0.5, 1.0])
def test_robust_eval_matches_closed_form(beta):
    rng = np.random.default_rng(2)
    for _ in range(10):
        mdp = random_mdp(rng, S=4, A=3, gamma=rng.uniform(0.5, 0.97))
        pi = DeterministicPolicy.from_array(rng.integers(3, size=4))
        v = robust_policy_eval(pi, mdp.reward, ContaminationSet(beta), mdp)
        np.testing.assert_allclose(v, closed_form_robust_value(mdp, pi, mdp.reward, beta), rtol=0, atol=1e-9)
        residual = robust_consistency_apply(v, pi, mdp.reward, ContaminationSet(beta), mdp) - v
        assert np.max(np.abs(residual)) <= 1e-10


def test_zero_reward_gives_zero_value():
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng)
    v = robust_policy_eval(DeterministicPolicy((0, 0, 0)), np.zeros((3, 2)), ContaminationSet(0.4), mdp)
    assert np.all(v == 0.0)


def test_non_convergence_raises():
    rng = np.random.default_rng(4)
    mdp = random_mdp(rng, gamma=0.999)
    with pytest.raises(NonConvergenceError):
        robust_policy_eval(DeterministicPolicy((0, 0, 0)), mdp.reward, ContaminationSet(0.0), mdp, RobustEvalConfig(max_iters=5))


def test_robust_optimal_matches_enumeration():
    rng = np.random.default_rng(5)
    mdp = random_mdp(rng, S=3, A=2)
    cset = ContaminationSet(0.3)
    v, pi = robust_optimal(mdp.reward, cset, mdp)
    best = np.max([robust_policy_eval(p, mdp.reward, cset, mdp) for p in all_policies(3, 2)], axis=0)
    np.testing.assert_allclose(v, best, rtol=0, atol=1e-9)
    np.testing.assert_allclose(robust_policy_eval(pi, mdp.reward, cset, mdp), best, rtol=0, atol=1e-9)
    assert np.max(np.abs(robust_optimality_apply(v, mdp.reward, cset, mdp) - v)) <= 1e-10


def test_robust_optimal_single_action_and_beta_zero():
    rng = np.random.default_rng(6)
    mdp = random_mdp(rng, S=3, A=1)
    v, pi = robust_optimal(mdp.reward, ContaminationSet(0.2), mdp)
    np.testing.assert_allclose(v, robust_policy_eval(pi, mdp.reward, ContaminationSet(0.2), mdp), atol=1e-12)
    mdp = random_mdp(rng, S=3, A=2)
    v0, pi0 = robust_optimal(mdp.reward, ContaminationSet(0.0), mdp)
    v1, pi1 = value_iteration(mdp.reward, mdp.kernel, mdp.discount)
    assert pi0 == pi1
    np.testing.assert_array_equal(v0, v1)


def test_argmax_ties_go_to_lowest_action():
    mdp = FiniteCMDP(1, 3, [[[1.0], [1.0], [1.0]]], [[1.0, 1.0, 1.0]], [], [], 0.5, [1.0])
    _, pi = robust_optimal(mdp.reward, ContaminationSet(0.1), mdp)
    assert pi.actions == (0,)


def test_worst_case_kernel_examples():
    mdp = FiniteCMDP(2, 1, [[[0.5, 0.5]], [[0.5, 0.5]]], [[0], [0]], [], [], 0.9, [1, 0])
    K = worst_case_kernel(DeterministicPolicy((0, 0)), [3.0, 1.0], ContaminationSet(0.5), mdp)
    np.testing.assert_allclose(K[0, 0], [0.25, 0.75])
    K0 = worst_case_kernel(DeterministicPolicy((0, 0)), [3.0, 1.0], ContaminationSet(0.0), mdp)
    np.testing.assert_array_equal(K0, mdp.kernel)
    np.testing.assert_allclose(K.sum(axis=2), 1.0)


def test_worst_case_kernel_routes_to_fail_state():
    rng = np.random.default_rng(7)
    mdp = random_fail_state_cmdp(rng, 4, 2, 0)
    cset = ContaminationSet(0.3)
    pi = DeterministicPolicy((0, 1, 0, 0))
    v = robust_policy_eval(pi, mdp.reward, cset, mdp)
    K = worst_case_kernel(pi, v, cset, mdp)
    np.testing.assert_allclose(K - 0.7 * mdp.kernel, np.broadcast_to(np.eye(4)[3] * 0.3, K.shape), atol=1e-15)


def test_kernel_policy_eval_examples():
    rng = np.random.default_rng(8)
    mdp = random_mdp(rng)
    v = kernel_policy_eval(DeterministicPolicy((0, 1, 0)), np.full((3, 2), 2.0), mdp.kernel, 0.8)
    np.testing.assert_allclose(v, 10.0, atol=1e-9)
    # two-state example with xi fixed at 1: v(s0) = 1 + 0.95 * 20
    P = np.array([[[0.0, 1.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])
    r = np.array([[1.0, 0.0], [1.0, 2.0]])
    v = kernel_policy_eval(DeterministicPolicy((0, 0)), r, P, 0.95, RobustEvalConfig(tol=1e-12))
    np.testing.assert_allclose(v, [20.0, 20.0], atol=1e-9)


def test_adversary_optimality_over_sampled_kernels():
    rng = np.random.default_rng(9)
    mdp = random_mdp(rng, S=4, A=2)
    cset = ContaminationSet(0.35)
    pi = DeterministicPolicy((1, 0, 1, 1))
    tol = 1e-10
    v = robust_policy_eval(pi, mdp.reward, cset, mdp)
    for _ in range(100):
        Q = rng.dirichlet(np.ones(4), size=(4, 2))
        K = (1 - cset.beta) * mdp.kernel + cset.beta * Q
        assert np.all(kernel_policy_eval(pi, mdp.reward, K, mdp.discount) >= v - 2 * tol)
    K = worst_case_kernel(pi, v, cset, mdp)
    np.testing.assert_allclose(kernel_policy_eval(pi, mdp.reward, K, mdp.discount), v, rtol=0, atol=2 * tol)


def test_robust_below_nominal_and_monotone_in_beta():
    rng = np.random.default_rng(10)
    mdp = random_mdp(rng, S=4, A=2)
    pi = DeterministicPolicy((0, 1, 1, 0))
    nominal = kernel_policy_eval(pi, mdp.reward, mdp.kernel, mdp.discount)
    prev = None
    for beta in np.linspace(0, 1, 11):
        v = robust_policy_eval(pi, mdp.reward, ContaminationSet(beta), mdp)
        assert np.all(v <= nominal + 1e-9)
        if prev is not None:
            assert np.all(v <= prev + 1e-9)
        prev = v


def test_fail_state_value_is_pinned_to_zero():
    rng = np.random.default_rng(11)
    for _ in range(10):
        mdp = random_fail_state_cmdp(rng, 4, 3, 2)
        pi = DeterministicPolicy.from_array(rng.integers(3, size=4))
        for sig in [mdp.reward, *mdp.constraints]:
            v = robust_policy_eval(pi, sig, ContaminationSet(rng.uniform(0, 0.9)), mdp)
            assert abs(v[mdp.fail_state]) <= 1e-10


def test_contraction_and_monotonicity_of_general_operator():
    rng = np.random.default_rng(12)
    for _ in range(100):
        mdp = random_mdp(rng, S=4, A=2, gamma=rng.uniform(0.3, 0.99))
        cset = ContaminationSet(rng.uniform())
        pi = DeterministicPolicy.from_array(rng.integers(2, size=4))
        v1, v2 = rng.normal(0, 5, 4), rng.normal(0, 5, 4)
        T1 = robust_consistency_apply(v1, pi, mdp.reward, cset, mdp)
        T2 = robust_consistency_apply(v2, pi, mdp.reward, cset, mdp)
        assert np.max(np.abs(T1 - T2)) <= (mdp.discount + 1e-12) * np.max(np.abs(v1 - v2))
        hi = np.maximum(v1, v2)
        assert np.all(robust_consistency_apply(hi, pi, mdp.reward, cset, mdp) >= T1 - 1e-12)
