import csv
import io
import math

import numpy as np
import pytest
from conftest import random_family

from drcrl.game import (
    DualState,
    SolveParams,
    Termination,
    eg_update,
    l_min_exact,
    lagrangian,
    mixed_policy_from_document,
    policy_document,
    solve,
    trace_header,
    write_trace_csv,
)
from drcrl.harness import oracle_solve
from drcrl.instances import cliff_gridworld, random_fail_state_cmdp
from drcrl.mdp import ContaminationSet, mixed_value, scalar_value
from drcrl.robust import robust_optimal


def test_lagrangian_examples():
    assert lagrangian(10.0, [4.0], [2.0], [0.0, 3.0]) == 10.0
    assert lagrangian(10.0, [2.0, 1.0], [2.0, 1.0], [1.0, 5.0, 3.0]) == 10.0
    # constraint violated by 1 with multiplier 3 costs 3
    assert lagrangian(10.0, [1.0], [2.0], [3.0, 0.0]) == 7.0
    with pytest.raises(ValueError):
        lagrangian(1.0, [1.0], [1.0], [1.0])


def test_l_min_examples():
    assert l_min_exact(10.0, [0.0, 1.0], [1.0, 3.0], 5.0) == 10.0 - 5.0 * 2.0
    # all constraints satisfied: the slack vertex is optimal
    assert l_min_exact(10.0, [3.0], [1.0], 5.0) == 10.0
    assert l_min_exact(10.0, [1.0, 2.0], [3.0, 5.0], 1.0) == 10.0 - 3.0


def test_l_min_is_vertex_minimum():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = int(rng.integers(1, 4))
        R, G, tau, B = rng.normal(), rng.normal(size=m), rng.normal(size=m), rng.uniform(0.1, 10)
        lams = rng.dirichlet(np.ones(m + 1), size=2000) * B
        sampled = min(lagrangian(R, G, tau, lam) for lam in lams)
        assert l_min_exact(R, G, tau, B) <= sampled + 1e-12


def test_eg_update_examples():
    s = DualState.from_lambda([1.0, 1.0], 2.0, math.log(2.0))
    np.testing.assert_allclose(eg_update(s, [1.0, 0.0]).lam, [2 / 3, 4 / 3], rtol=1e-15)
    np.testing.assert_allclose(eg_update(s, [0.0, 0.0]).lam, s.lam, rtol=1e-15)
    # a satisfied constraint (positive residual) loses weight, a violated one gains
    t = DualState.uniform(1, 10.0, 0.1)
    assert eg_update(t, [2.0, 0.0]).lam[0] < t.lam[0]
    assert eg_update(t, [-2.0, 0.0]).lam[0] > t.lam[0]


def test_eg_update_errors_and_stability():
    with pytest.raises(ValueError):
        DualState.from_lambda([0.0, 2.0], 2.0, 0.1)
    s = DualState.uniform(2, 5.0, 1.0)
    with pytest.raises(ValueError):
        eg_update(s, [np.inf, 0.0, 0.0])
    for _ in range(2000):
        s = eg_update(s, [800.0, -800.0, 0.0])
    lam = s.lam
    assert np.all(np.isfinite(lam)) and abs(lam.sum() - 5.0) <= 1e-9


def test_dual_state_is_normalized():
    s = DualState.uniform(3, 7.0, 0.2)
    np.testing.assert_allclose(s.lam, 7.0 / 4)


def test_m_zero_terminates_in_one_round():
    rng = np.random.default_rng(1)
    mdp = random_fail_state_cmdp(rng, 4, 3, 0)
    cset = ContaminationSet(0.2)
    res = solve(mdp, cset)
    assert res.n_rounds == 1 and res.terminated is Termination.GAP_BELOW_OMEGA
    assert res.certified_gap == 0.0
    _, pi = robust_optimal(mdp.reward, cset, mdp)
    assert res.final_policy.policies == [pi]


@pytest.fixture(scope="module")
def solved():
    mdp, cset = random_family(seed=31, n=1)[0]
    return mdp, cset, solve(mdp, cset, SolveParams(B=20.0, eta=0.5, omega=1e-3, max_rounds=3000))


def test_round_invariants(solved):
    mdp, cset, res = solved
    tau, B = mdp.thresholds, 20.0
    counts = {}
    sum_R, sum_G, sum_lam = 0.0, 0.0, 0.0
    for r in res.rounds:
        assert abs(r.lam.sum() - B) <= 1e-9 and np.all(r.lam >= 0)
        counts[r.policy] = counts.get(r.policy, 0) + 1
        sum_R, sum_G, sum_lam = sum_R + r.R_hat, sum_G + r.G_hat, sum_lam + r.lam
        t = r.index
        L_avg = lagrangian(sum_R / t, sum_G / t, tau, sum_lam / t)
        assert r.L_min <= L_avg + 1e-9 <= r.L_max + 2e-9
    assert res.certified_gap == res.rounds[-1].L_max - res.rounds[-1].L_min
    assert res.certified_gap >= -1e-9
    T = res.n_rounds
    assert dict((pi, w) for w, pi in res.final_policy.atoms) == {pi: c / T for pi, c in counts.items()}


def test_average_consistency(solved):
    mdp, cset, res = solved
    vr = mixed_value(res.final_policy, {pi: v[0] for pi, v in res.atom_values.items()})
    assert abs(scalar_value(vr, mdp.initial_dist) - res.objective) <= 1e-10


def test_regret_decreases_with_horizon():
    mdp, cset = random_family(seed=41, n=1)[0]
    res = solve(mdp, cset, SolveParams(B=20.0, eta=0.5, omega=1e-12, max_rounds=4000))
    tau = mdp.thresholds
    avg = []
    for T in (50, 500, 4000):
        rounds = res.rounds[:T]
        played = sum(lagrangian(r.R_hat, r.G_hat, tau, r.lam) for r in rounds)
        resid = np.array([np.append(r.G_hat - tau, 0.0) for r in rounds]).sum(axis=0)
        best_fixed = sum(r.R_hat for r in rounds) + 20.0 * resid.min()
        avg.append((played - best_fixed) / T)
    assert avg[0] > avg[1] > avg[2]


def test_gridworld_reaches_gap_and_oracle():
    mdp = cliff_gridworld()
    cset = ContaminationSet(0.1)
    res = solve(mdp, cset, SolveParams(B=30.0, eta=0.05, omega=0.01, max_rounds=50_000))
    assert res.terminated is Termination.GAP_BELOW_OMEGA and res.certified_gap < 0.01
    opt = oracle_solve(mdp, cset).optimum
    assert res.objective >= opt - 0.01 - 1e-4
    # the mixed policy may be infeasible by the shortfall, so it can exceed OPT by at most B times that much
    assert res.objective <= opt + 1e-6 + 30.0 * res.shortfall


def test_infeasible_runs_to_budget_with_bounded_shortfall():
    rng = np.random.default_rng(2)
    mdp = random_fail_state_cmdp(rng, 3, 2, 1)
    gbar_eff = mdp.constraint_max / (1 - mdp.discount * 0.9)
    mdp = mdp.replace(thresholds=[gbar_eff * 1.1])
    res = solve(mdp, ContaminationSet(0.1), SolveParams(B=30.0, eta=0.05, omega=0.01, max_rounds=300))
    assert res.terminated is Termination.MAX_ROUNDS and res.n_rounds == 300
    assert res.shortfall <= res.shortfall_bound


def test_trace_csv_schema(solved):
    mdp, cset, res = solved
    text = write_trace_csv(res)
    rows = list(csv.reader(io.StringIO(text)))
    m = mdp.n_constraints
    assert rows[0] == trace_header(m)
    assert rows[0][: m + 2] == ["round"] + [f"lambda_{i}" for i in range(m + 1)]
    assert len(rows) == res.n_rounds + 1
    last = res.rounds[-1]
    assert float(rows[-1][m + 4]) == last.L_max - last.L_min
    assert float(rows[-1][1]) == last.lam[0]


def test_policy_document_round_trip(solved):
    _, _, res = solved
    doc = policy_document(res)
    back = mixed_policy_from_document(doc)
    assert back.policies == res.final_policy.policies
    assert all("value_r" in a and "value_g" in a for a in doc["atoms"])
