"""Two-state interval-uncertainty MDP on which the constrained robust operator loses greedy improvement.

For a contraction ``T`` on ``v = V_r - lam V_g`` that admits per-state greedy
maximization, any two policies agreeing at ``s0`` would satisfy

    |v1(s0) - v2(s0)| <= gamma ||v1 - v2||_inf.

This module evaluates the robust values exactly and scans ``lam`` for the
multipliers at which ``s0`` carries the whole sup-norm gap, which violates
the inequality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

GAMMA = 0.95
XI_LO, XI_HI = 0.9, 1.0
SCAN_HI = 5.0
EQ_TOL = 1e-9


def _closed_forms():
    """Exact values implied by the reward tables at gamma = 19/20."""
    g = Fraction(19, 20)
    xi = Fraction(9, 10)
    v1r = (Fraction(20), Fraction(20))
    v1g = (Fraction(1), Fraction(0))
    # pi2 at s0: 1 + g * ((1 - xi) V + xi * 40) solved for V (the adversary picks xi = 0.9 since V < 40)
    v2r_s0 = (1 + g * xi * 40) / (1 - g * (1 - xi))
    v2r = (v2r_s0, Fraction(40))
    v2g = (Fraction(20), Fraction(20))
    # |19 lam - c| = |20 lam - 20| with c = v2r(s0) - 20 bounds the violation interval
    c = v2r_s0 - 20
    interval = ((20 + c) / 39, 20 - c)
    return v1r, v1g, v2r, v2g, interval


CLOSED_V1R, CLOSED_V1G, CLOSED_V2R, CLOSED_V2G, CLOSED_INTERVAL = _closed_forms()


@dataclass(frozen=True, eq=False)
class IntervalKernelMDP:
    """States ``s0, s1``; actions ``a0, a1``.

    ``(s0, a0)`` moves to ``s1`` with probability ``xi`` in ``[xi_lo, xi_hi]``
    and stays otherwise, ``(s0, a1)`` stays at ``s0``, and ``s1`` is absorbing.
    """

    reward: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.0], [1.0, 2.0]]))
    constraint: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.0], [0.0, 1.0]]))
    xi_lo: float = XI_LO
    xi_hi: float = XI_HI
    gamma: float | None = None  # None reads the module-level GAMMA

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", GAMMA)
        if not 0.0 <= self.xi_lo <= self.xi_hi <= 1.0:
            raise ValueError(f"bad interval [{self.xi_lo}, {self.xi_hi}]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma!r}")

    def kernel(self, xi: float) -> np.ndarray:
        P = np.zeros((2, 2, 2))
        P[0, 0] = [1.0 - xi, xi]
        P[0, 1] = [1.0, 0.0]
        P[1, :] = [0.0, 1.0]
        return P

    def to_dict(self) -> dict:
        """Nominal ``xi = xi_hi`` instance in the MDP file schema (one constraint, no fail state)."""
        return {
            "n_states": 2,
            "n_actions": 2,
            "discount": self.gamma,
            "kernel": self.kernel(self.xi_hi).tolist(),
            "reward": self.reward.tolist(),
            "constraints": [self.constraint.tolist()],
            "thresholds": [1.0],
            "initial_dist": [1.0, 0.0],
            "fail_state": None,
        }


PI1 = (0, 0)
PI2 = (0, 1)


def interval_inner_min(v, mdp: IntervalKernelMDP | None = None) -> float:
    """``min over xi in [xi_lo, xi_hi]`` of ``(1 - xi) v(s0) + xi v(s1)``; linear, so endpoints suffice."""
    mdp = mdp or IntervalKernelMDP()
    v = np.asarray(v, dtype=float)
    if v.shape != (2,):
        raise ValueError(f"value must have length 2, got shape {v.shape}")
    return float(min((1.0 - xi) * v[0] + xi * v[1] for xi in (mdp.xi_lo, mdp.xi_hi)))


def _backup(v: np.ndarray, policy, signal: np.ndarray, mdp: IntervalKernelMDP) -> np.ndarray:
    out = np.empty(2)
    a0 = policy[0]
    nxt = interval_inner_min(v, mdp) if a0 == 0 else v[0]
    out[0] = signal[0, a0] + mdp.gamma * nxt
    out[1] = signal[1, policy[1]] + mdp.gamma * v[1]
    return out


def robust_value(policy, signal, mdp: IntervalKernelMDP | None = None, tol: float = 1e-12, max_iters: int = 100_000) -> np.ndarray:
    """Fixed point of the robust policy operator, iterated from zero."""
    mdp = mdp or IntervalKernelMDP()
    signal = np.asarray(signal, dtype=float)
    stop = tol * (1.0 - mdp.gamma) / max(mdp.gamma, 1e-300)
    v = np.zeros(2)
    for _ in range(max_iters):
        nv = _backup(v, policy, signal, mdp)
        if np.max(np.abs(nv - v)) <= stop:
            return nv
        v = nv
    raise RuntimeError("robust value iteration did not converge")


@dataclass(frozen=True)
class ExampleValues:
    v1_r: np.ndarray
    v1_g: np.ndarray
    v2_r: np.ndarray
    v2_g: np.ndarray


def example_robust_values(mdp: IntervalKernelMDP | None = None) -> ExampleValues:
    mdp = mdp or IntervalKernelMDP()
    return ExampleValues(
        robust_value(PI1, mdp.reward, mdp),
        robust_value(PI1, mdp.constraint, mdp),
        robust_value(PI2, mdp.reward, mdp),
        robust_value(PI2, mdp.constraint, mdp),
    )


@dataclass(frozen=True)
class Witness:
    lam: float
    v1_s0: float
    v2_s0: float
    gap_s0: float
    sup_norm: float
    gamma_sup_norm: float

    @property
    def margin(self) -> float:
        """``gap_s0 - gamma * sup_norm``; positive exactly when the inequality is violated."""
        return self.gap_s0 - self.gamma_sup_norm


def contradiction_holds(lambda_t: float, values: ExampleValues | None = None, mdp: IntervalKernelMDP | None = None):
    """Whether ``s0`` attains ``||v1 - v2||_inf > 0`` with ``v_i = V_r - lambda_t V_g``."""
    if lambda_t < 0:
        raise ValueError(f"lambda_t must be non-negative, got {lambda_t!r}")
    mdp = mdp or IntervalKernelMDP()
    values = values or example_robust_values(mdp)
    v1 = values.v1_r - lambda_t * values.v1_g
    v2 = values.v2_r - lambda_t * values.v2_g
    d = np.abs(v1 - v2)
    sup = float(d.max())
    w = Witness(float(lambda_t), float(v1[0]), float(v2[0]), float(d[0]), sup, mdp.gamma * sup)
    return bool(abs(d[0] - sup) <= EQ_TOL and sup > 0.0), w


def scan(grid_step: float = 1e-3, hi: float = SCAN_HI, mdp: IntervalKernelMDP | None = None):
    mdp = mdp or IntervalKernelMDP()
    values = example_robust_values(mdp)
    n = int(round(hi / grid_step))
    return [contradiction_holds(k * grid_step, values, mdp) for k in range(n + 1)]


def violation_mask(lambdas, values: ExampleValues, tol: float = EQ_TOL) -> np.ndarray:
    """Vectorized :func:`contradiction_holds` over an array of multipliers."""
    lam = np.asarray(lambdas, dtype=float)[:, None]
    d = np.abs((values.v1_r - lam * values.v1_g) - (values.v2_r - lam * values.v2_g))
    sup = d.max(axis=1)
    return (np.abs(d[:, 0] - sup) <= tol) & (sup > 0.0)


def violation_interval(grid_step: float = 1e-3, mdp: IntervalKernelMDP | None = None) -> tuple[float, float]:
    """Smallest and largest grid multiplier in ``[0, 5]`` at which the inequality fails."""
    if not 0.0 < grid_step <= 1e-3:
        raise ValueError(f"grid_step must lie in (0, 0.001], got {grid_step!r}")
    lams = np.arange(int(round(SCAN_HI / grid_step)) + 1) * grid_step
    hits = lams[violation_mask(lams, example_robust_values(mdp))]
    if hits.size == 0:
        raise RuntimeError("no violating multiplier found on the scan grid")
    return float(hits[0]), float(hits[-1])


@dataclass
class Verification:
    values: ExampleValues
    interval: tuple[float, float]
    mismatches: list[str]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def verify(grid_step: float = 1e-3, mdp: IntervalKernelMDP | None = None, value_tol: float = 1e-8) -> Verification:
    """Compare the computed values and interval with their exact closed forms."""
    mdp = mdp or IntervalKernelMDP()
    vals = example_robust_values(mdp)
    mismatches = []
    for name, got, want in (
        ("V_r(pi1)", vals.v1_r, CLOSED_V1R),
        ("V_g(pi1)", vals.v1_g, CLOSED_V1G),
        ("V_r(pi2)", vals.v2_r, CLOSED_V2R),
        ("V_g(pi2)", vals.v2_g, CLOSED_V2G),
    ):
        want = np.array([float(x) for x in want])
        if np.max(np.abs(got - want)) > value_tol:
            mismatches.append(f"{name} = {got.tolist()}, expected {want.tolist()}")
    try:
        lo, hi = violation_interval(grid_step, mdp)
    except RuntimeError as exc:
        mismatches.append(str(exc))
        lo = hi = float("nan")
    want_lo, want_hi = (float(x) for x in CLOSED_INTERVAL)
    if not (abs(lo - want_lo) <= 2 * grid_step and abs(hi - want_hi) <= 2 * grid_step):
        mismatches.append(f"interval [{lo}, {hi}], expected [{want_lo:.6f}, {want_hi:.6f}] within {2 * grid_step:g}")
    return Verification(vals, (lo, hi), mismatches)


def table(lambdas, mdp: IntervalKernelMDP | None = None):
    """Rows ``(lam, v1(s0), v2(s0), |delta(s0)|, ||delta||_inf, violated)``."""
    mdp = mdp or IntervalKernelMDP()
    values = example_robust_values(mdp)
    rows = []
    for lam in lambdas:
        ok, w = contradiction_holds(float(lam), values, mdp)
        rows.append((w.lam, w.v1_s0, w.v2_s0, w.gap_s0, w.sup_norm, ok))
    return rows
