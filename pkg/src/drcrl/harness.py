"""Shifted-environment evaluation, robustness sweeps and the exact mixture-LP oracle."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from drcrl.game import SolveParams, SolveResult, solve
from drcrl.instances import all_policies
from drcrl.mdp import ROW_SUM_TOL, ContaminationSet, DeterministicPolicy, FiniteCMDP, MixedPolicy
from drcrl.robust import DEFAULT_CONFIG, RobustEvalConfig, kernel_policy_eval, robust_policy_eval, robust_values, worst_case_kernel

ENUMERATION_GUARD = 4096
ORACLE_CONFIG = RobustEvalConfig(tol=1e-12)
ORACLE_FEAS_TOL = 1e-9
COMBINATION_GUARD = 50_000_000
RANDOM_SEEDS = 3


class ShiftKind(str, Enum):
    WORST_CASE = "worst_case"
    RANDOM_CONTAMINATION = "random_contamination"
    EXPLICIT_KERNEL = "explicit_kernel"


@dataclass(frozen=True, eq=False)
class ShiftSpec:
    kind: ShiftKind
    magnitude: float = 0.0
    seed: int = 0
    kernel: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ShiftKind(self.kind))
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError(f"shift magnitude must lie in [0, 1], got {self.magnitude!r}")
        if self.kind is ShiftKind.EXPLICIT_KERNEL:
            if self.kernel is None:
                raise ValueError("explicit_kernel shift needs a kernel")
            K = np.array(self.kernel, dtype=float)
            if K.ndim != 3 or np.any(K < 0) or np.any(np.abs(K.sum(axis=2) - 1.0) > ROW_SUM_TOL):
                raise ValueError("explicit shift kernel must be a row-stochastic (S, A, S) tensor")
            K.setflags(write=False)
            object.__setattr__(self, "kernel", K)


def random_contamination_kernel(mdp: FiniteCMDP, magnitude: float, seed: int) -> np.ndarray:
    """``(1 - magnitude) P° + magnitude Q`` with each row of ``Q`` uniform on the simplex.

    Rows of the fail state stay absorbing.
    """
    rng = np.random.default_rng(seed)
    E = rng.standard_exponential((mdp.n_states, mdp.n_actions, mdp.n_states))
    Q = E / E.sum(axis=2, keepdims=True)
    K = (1.0 - magnitude) * np.array(mdp.kernel) + magnitude * Q
    if mdp.fail_state is not None:
        K[mdp.fail_state] = mdp.kernel[mdp.fail_state]
    return K


def _signals(mdp: FiniteCMDP):
    return [mdp.reward] + list(mdp.constraints)


def _atom_values(pi: DeterministicPolicy, mdp: FiniteCMDP, shift: ShiftSpec, gamma_eval: float, cfg) -> np.ndarray:
    """Deployed values ``[V_r(mu), V_g0(mu), ...]`` of one deterministic policy."""
    mu = mdp.initial_dist
    out = []
    if shift.kind is ShiftKind.WORST_CASE:
        cset = ContaminationSet(shift.magnitude)
        for sig in _signals(mdp):
            # the adversary targets each signal separately, as in the robust value itself
            v = robust_policy_eval(pi, sig, cset, mdp, cfg)
            K = worst_case_kernel(pi, v, cset, mdp)
            out.append(kernel_policy_eval(pi, sig, K, gamma_eval, cfg) @ mu)
        return np.array(out)
    if shift.kind is ShiftKind.RANDOM_CONTAMINATION:
        K = random_contamination_kernel(mdp, shift.magnitude, shift.seed)
    else:
        K = shift.kernel
    return np.array([kernel_policy_eval(pi, sig, K, gamma_eval, cfg) @ mu for sig in _signals(mdp)])


def evaluate_under_shift(
    policy: MixedPolicy,
    mdp: FiniteCMDP,
    shift: ShiftSpec,
    gamma_eval: Optional[float] = None,
    cfg: RobustEvalConfig = DEFAULT_CONFIG,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective, constraint values and satisfaction flags of ``policy`` in the shifted environment.

    ``gamma_eval`` defaults to the MDP's own discount.
    """
    if gamma_eval is None:
        gamma_eval = mdp.discount
    if shift.kind is ShiftKind.EXPLICIT_KERNEL and shift.kernel.shape != mdp.kernel.shape:
        raise ValueError(f"shift kernel has shape {shift.kernel.shape}, expected {mdp.kernel.shape}")
    total = np.zeros(mdp.n_constraints + 1)
    for w, pi in policy.atoms:
        total = total + w * _atom_values(pi, mdp, shift, gamma_eval, cfg)
    cons = total[1:]
    return float(total[0]), cons, cons >= mdp.thresholds


@dataclass(frozen=True, eq=False)
class SweepRow:
    beta: float
    shift_kind: ShiftKind
    shift_magnitude: float
    seed: Optional[int]
    objective: float
    constraints: np.ndarray
    satisfied: np.ndarray


@dataclass(frozen=True, eq=False)
class SweepResult:
    rows: tuple[SweepRow, ...]
    solves: dict  # beta -> SolveResult
    n_constraints: int

    def frontier(self, beta: float) -> float:
        return frontier(self.rows, beta)


def beta_sweep(
    mdp: FiniteCMDP,
    betas: Sequence[float],
    shift_magnitudes: Sequence[float],
    params: SolveParams = SolveParams(),
    cfg: RobustEvalConfig = DEFAULT_CONFIG,
    seed: int = 0,
    random_seeds: int = RANDOM_SEEDS,
) -> SweepResult:
    """Train at each ``beta`` and deploy under worst-case and random contamination shifts."""
    betas = [float(b) for b in betas]
    if not betas:
        raise ValueError("betas must not be empty")
    if any(not 0.0 <= b < 1.0 for b in betas):
        raise ValueError(f"every beta must lie in [0, 1), got {betas}")
    rows: list[SweepRow] = []
    solves: dict[float, SolveResult] = {}
    for b in betas:
        res = solve(mdp, ContaminationSet(b), params, cfg)
        solves[b] = res
        for mag in shift_magnitudes:
            specs = [(ShiftSpec(ShiftKind.WORST_CASE, mag), None)]
            specs += [(ShiftSpec(ShiftKind.RANDOM_CONTAMINATION, mag, seed + k), seed + k) for k in range(random_seeds)]
            for spec, sd in specs:
                obj, cons, sat = evaluate_under_shift(res.final_policy, mdp, spec, mdp.discount, cfg)
                rows.append(SweepRow(b, spec.kind, float(mag), sd, obj, cons, sat))
    return SweepResult(tuple(rows), solves, mdp.n_constraints)


def frontier(rows: Sequence[SweepRow], beta: float, kind: ShiftKind = ShiftKind.WORST_CASE) -> float:
    """Largest magnitude up to which every constraint holds at every smaller magnitude.

    Returns ``-inf`` when the constraints already fail at the smallest magnitude.
    """
    cells = sorted((r.shift_magnitude, bool(np.all(r.satisfied))) for r in rows if r.beta == beta and r.shift_kind is kind)
    best = -math.inf
    for mag, ok in cells:
        if not ok:
            break
        best = mag
    return best


def sweep_header(m: int) -> list[str]:
    return (
        ["beta", "shift_kind", "shift_magnitude", "seed", "objective"]
        + [f"g_{i}" for i in range(m)]
        + [f"satisfied_{i}" for i in range(m)]
    )


def write_sweep_csv(result: SweepResult, stream=None) -> str:
    buf = stream if stream is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(sweep_header(result.n_constraints))
    f = lambda x: format(float(x), ".17g")  # noqa: E731
    for r in result.rows:
        w.writerow(
            [f(r.beta), r.shift_kind.value, f(r.shift_magnitude), "" if r.seed is None else r.seed, f(r.objective)]
            + [f(x) for x in r.constraints]
            + [int(s) for s in r.satisfied]
        )
    return buf.getvalue() if stream is None else ""


# --- exact mixture-LP oracle -------------------------------------------------


@dataclass(frozen=True, eq=False)
class OracleSolution:
    optimum: float
    support: tuple[tuple[float, DeterministicPolicy], ...]
    feasible: bool

    def as_mixed(self) -> MixedPolicy:
        if not self.feasible:
            raise ValueError("infeasible oracle solution has no policy")
        return MixedPolicy.from_pairs(self.support)


@dataclass(frozen=True, eq=False)
class PolicyValues:
    policies: tuple[DeterministicPolicy, ...]
    R: np.ndarray  # (N,)
    G: np.ndarray  # (N, m)


def enumerate_policy_values(mdp: FiniteCMDP, cset: ContaminationSet, cfg: RobustEvalConfig = ORACLE_CONFIG) -> PolicyValues:
    n = mdp.n_actions**mdp.n_states
    if n > ENUMERATION_GUARD:
        raise ValueError(f"{n} deterministic policies exceed the enumeration guard of {ENUMERATION_GUARD}")
    pols = tuple(all_policies(mdp.n_states, mdp.n_actions))
    R = np.empty(n)
    G = np.empty((n, mdp.n_constraints))
    mu = mdp.initial_dist
    for k, pi in enumerate(pols):
        vr, vg = robust_values(pi, cset, mdp, cfg)
        R[k] = vr @ mu
        G[k] = vg @ mu
    return PolicyValues(pols, R, G)


def _pareto_indices(R: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Indices of distinct non-dominated ``(R, G)`` points, first occurrence kept."""
    pts = np.column_stack([R, G])
    _, first = np.unique(pts, axis=0, return_index=True)
    first = np.sort(first)
    P = pts[first]
    ge = np.all(P[:, None, :] >= P[None, :, :], axis=2)
    gt = np.any(P[:, None, :] > P[None, :, :], axis=2)
    dominated = np.any(ge & gt, axis=0)
    return first[~dominated]


def _lp_vertices(R: np.ndarray, G: np.ndarray, tau: np.ndarray):
    """Best basic feasible solution of ``max R'a`` over the simplex with ``G'a >= tau``."""
    N, m = G.shape
    best_val, best = -math.inf, None
    for k in range(1, min(m + 1, N) + 1):
        for active in itertools.combinations(range(m), k - 1):
            act = list(active)
            n_comb = math.comb(N, k)
            if n_comb > COMBINATION_GUARD:
                raise ValueError(f"{n_comb} candidate supports exceed the oracle guard")
            combos_iter = itertools.combinations(range(N), k)
            while True:
                chunk = np.array(list(itertools.islice(combos_iter, 200_000)), dtype=np.intp)
                if chunk.size == 0:
                    break
                chunk = chunk.reshape(-1, k)
                M = np.ones((chunk.shape[0], k, k))
                rhs = np.ones((chunk.shape[0], k))
                for row, i in enumerate(act, start=1):
                    M[:, row, :] = G[chunk, i]
                    rhs[:, row] = tau[i]
                det = np.linalg.det(M) if k > 1 else np.ones(chunk.shape[0])
                ok = np.abs(det) > 1e-12
                if not np.any(ok):
                    continue
                chunk, M, rhs = chunk[ok], M[ok], rhs[ok]
                alpha = np.linalg.solve(M, rhs[..., None])[..., 0]
                feas = np.all(alpha >= -1e-12, axis=1)
                if m:
                    gv = np.einsum("nk,nki->ni", alpha, G[chunk])
                    feas &= np.all(gv >= tau - ORACLE_FEAS_TOL, axis=1)
                if not np.any(feas):
                    continue
                vals = np.where(feas, np.einsum("nk,nk->n", alpha, R[chunk]), -math.inf)
                j = int(np.argmax(vals))
                if vals[j] > best_val:
                    best_val = float(vals[j])
                    best = (chunk[j], np.clip(alpha[j], 0.0, None))
    return best_val, best


def oracle_from_values(values: PolicyValues, tau) -> OracleSolution:
    tau = np.asarray(tau, dtype=float)
    keep = _pareto_indices(values.R, values.G)
    val, best = _lp_vertices(values.R[keep], values.G[keep], tau)
    if best is None:
        return OracleSolution(-math.inf, (), False)
    idx, alpha = best
    alpha = alpha / alpha.sum()
    support = tuple((float(a), values.policies[keep[i]]) for i, a in zip(idx, alpha) if a > 0.0)
    return OracleSolution(val, support, True)


def oracle_solve(mdp: FiniteCMDP, cset: ContaminationSet, cfg: RobustEvalConfig = ORACLE_CONFIG) -> OracleSolution:
    """Exact optimum over mixtures of deterministic policies by LP vertex enumeration."""
    return oracle_from_values(enumerate_policy_values(mdp, cset, cfg), mdp.thresholds)


# --- strong duality by grid search over the multiplier simplex ----------------


def dual_function(values: PolicyValues, tau, lam) -> np.ndarray:
    """``max_pi L(pi, lam)`` for each row of ``lam`` (shape ``(n, m + 1)``)."""
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    resid = values.G - np.asarray(tau, dtype=float)
    return np.max(values.R[None, :] + lam[:, :-1] @ resid.T, axis=1)


def _simplex_grid(m: int, n_steps: int) -> np.ndarray:
    """Integer points ``c`` with ``sum(c[:m]) <= n_steps``; the slack is implied."""
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)
    axes = np.meshgrid(*[np.arange(n_steps + 1)] * m, indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    return pts[pts.sum(axis=1) <= n_steps]


def grid_min_dual(values: PolicyValues, tau, B: float, step: float = 1e-3, refine_to: float = 1e-9, chunk: int = 100_000):
    """Minimize the dual function over ``||lam||_1 = B`` by grid search at ``step`` then local zooming.

    ``step`` is a fraction of ``B``.  Each zoom searches a box of two old cells
    around the incumbent at a tenth of the spacing.
    """
    m = values.G.shape[1]
    n = int(round(1.0 / step))
    pts = _simplex_grid(m, n) / n
    best_val, best = math.inf, None
    for lo in range(0, len(pts), chunk):
        frac = pts[lo : lo + chunk]
        lam = B * np.column_stack([frac, 1.0 - frac.sum(axis=1)])
        vals = dual_function(values, tau, lam)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best = float(vals[j]), frac[j]
    h = step
    while h > refine_to and m > 0:
        fine = h / 10.0
        offs = np.arange(-20, 21) * fine
        grids = np.meshgrid(*[offs] * m, indexing="ij")
        cand = best[None, :] + np.stack([g.ravel() for g in grids], axis=1)
        cand = cand[np.all(cand >= 0.0, axis=1) & (cand.sum(axis=1) <= 1.0)]
        lam = B * np.column_stack([cand, 1.0 - cand.sum(axis=1)])
        vals = dual_function(values, tau, lam)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best = float(vals[j]), cand[j]
        h = fine
    return best_val, B * np.append(best, 1.0 - best.sum())

