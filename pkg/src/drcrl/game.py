"""Primal-dual game for the robust constrained problem.

The policy player best-responds to the current multiplier; the multiplier
player runs exponentiated gradient on the ``B``-scaled simplex of dimension
``m + 1`` (the last coordinate is a slack that contributes nothing).  The
uniform averages of both players are certified by the duality gap
``L_max - L_min``.

Constraints are ``V_g(mu) >= tau``, so the Lagrangian is
``L(pi, lam) = V_r(mu) + lam' [(V_g(mu) - tau), 0]`` and the multiplier player
minimizes it.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from drcrl.best_response import best_response
from drcrl.mdp import ContaminationSet, DeterministicPolicy, FiniteCMDP, MixedPolicy
from drcrl.robust import DEFAULT_CONFIG, RobustEvalConfig, robust_values


def _padded(value_g_mu, tau) -> np.ndarray:
    resid = np.asarray(value_g_mu, dtype=float) - np.asarray(tau, dtype=float)
    return np.append(resid, 0.0)


def lagrangian(value_r_mu: float, value_g_mu, tau, lam) -> float:
    lam = np.asarray(lam, dtype=float)
    resid = _padded(value_g_mu, tau)
    if lam.shape != resid.shape:
        raise ValueError(f"multiplier has shape {lam.shape}, expected {resid.shape}")
    return float(value_r_mu + lam @ resid)


def l_min_exact(value_r_mu: float, value_g_mu, tau, B: float) -> float:
    """Minimum of the Lagrangian over ``||lam||_1 = B``, attained at a simplex vertex."""
    return float(value_r_mu + B * np.min(_padded(value_g_mu, tau)))


@dataclass(frozen=True, eq=False)
class DualState:
    """Multiplier on the ``B``-scaled simplex, stored as normalized log-weights.

    Log-weights keep every coordinate strictly positive in exact terms even when
    ``B * exp(log_weight)`` underflows after many rounds.
    """

    log_weights: np.ndarray
    bound_B: float
    learning_rate: float

    def __post_init__(self):
        lw = np.array(self.log_weights, dtype=float)
        if not np.all(np.isfinite(lw)):
            raise ValueError("log-weights must be finite (zero multiplier entries are not allowed)")
        lw = lw - lw.max()
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)
        if not self.bound_B > 0:
            raise ValueError(f"bound B must be positive, got {self.bound_B!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate!r}")

    @classmethod
    def uniform(cls, m: int, B: float, eta: float) -> "DualState":
        return cls(np.zeros(m + 1), B, eta)

    @classmethod
    def from_lambda(cls, lam, B: float, eta: float) -> "DualState":
        lam = np.asarray(lam, dtype=float)
        if np.any(lam <= 0.0):
            raise ValueError(f"exponentiated gradient needs strictly positive multipliers, got {lam.tolist()}")
        if abs(lam.sum() - B) > 1e-9 * max(1.0, B):
            raise ValueError(f"multiplier sums to {lam.sum()!r}, expected B = {B!r}")
        return cls(np.log(lam), B, eta)

    @property
    def lam(self) -> np.ndarray:
        e = np.exp(self.log_weights)
        return self.bound_B * (e / e.sum())


def eg_update(state: DualState, z) -> DualState:
    """``lam[i] <- B lam[i] exp(-eta z[i]) / sum_j lam[j] exp(-eta z[j])``."""
    z = np.asarray(z, dtype=float)
    if z.shape != state.log_weights.shape:
        raise ValueError(f"gradient has shape {z.shape}, expected {state.log_weights.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite gradient")
    # DualState renormalizes by subtracting the max log-weight
    return DualState(state.log_weights - state.learning_rate * z, state.bound_B, state.learning_rate)


@dataclass(frozen=True)
class SolveParams:
    B: float = 30.0
    eta: float = 0.05
    omega: float = 0.01
    max_rounds: int = 200

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError(f"B must be positive, got {self.B!r}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta!r}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega!r}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds!r}")


class Termination(str, Enum):
    GAP_BELOW_OMEGA = "gap_below_omega"
    MAX_ROUNDS = "max_rounds"


@dataclass(frozen=True, eq=False)
class Round:
    index: int
    lam: np.ndarray
    policy: DeterministicPolicy
    R_hat: float
    G_hat: np.ndarray
    L_max: float
    L_min: float

    @property
    def gap(self) -> float:
        return self.L_max - self.L_min


@dataclass(frozen=True, eq=False)
class SolveResult:
    rounds: tuple[Round, ...]
    final_policy: MixedPolicy
    final_lambda_avg: np.ndarray
    certified_gap: float
    terminated: Termination
    objective: float
    constraint_values: np.ndarray
    thresholds: np.ndarray
    shortfall_bound: float
    atom_values: dict = field(repr=False)

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    @property
    def shortfall(self) -> float:
        """Largest constraint violation ``max_i (tau_i - V_gi(mu))``, floored at 0."""
        if self.thresholds.size == 0:
            return 0.0
        return max(0.0, float(np.max(self.thresholds - self.constraint_values)))


class _Evaluator:
    """Memoized exact robust evaluation of deterministic policies at ``mu``."""

    def __init__(self, mdp: FiniteCMDP, cset: ContaminationSet, cfg: RobustEvalConfig):
        self.mdp, self.cset, self.cfg = mdp, cset, cfg
        self.values: dict[DeterministicPolicy, tuple[np.ndarray, np.ndarray]] = {}
        self._mu_cache: dict[DeterministicPolicy, tuple[float, np.ndarray]] = {}

    def __call__(self, pi: DeterministicPolicy) -> tuple[float, np.ndarray]:
        hit = self._mu_cache.get(pi)
        if hit is None:
            vr, vg = robust_values(pi, self.cset, self.mdp, self.cfg)
            self.values[pi] = (vr, vg)
            mu = self.mdp.initial_dist
            hit = (float(vr @ mu), vg @ mu)
            self._mu_cache[pi] = hit
        return hit


def shortfall_bound(mdp: FiniteCMDP, cset: ContaminationSet, B: float, omega: float) -> float:
    """``2 (V_bar + omega) / B`` with ``V_bar = (R_max + B G_max) / (1 - gamma_eff)``."""
    g_eff = mdp.discount * (1.0 - cset.beta)
    v_bar = (mdp.reward_max + B * mdp.constraint_max) / (1.0 - g_eff)
    return 2.0 * (v_bar + omega) / B


def solve(
    mdp: FiniteCMDP,
    cset: ContaminationSet,
    params: SolveParams = SolveParams(),
    cfg: RobustEvalConfig = DEFAULT_CONFIG,
) -> SolveResult:
    m = mdp.n_constraints
    tau = mdp.thresholds
    B = params.B
    evaluate = _Evaluator(mdp, cset, cfg)
    state = DualState.uniform(m, B, params.eta)

    counts: dict[DeterministicPolicy, int] = {}
    sum_R = 0.0
    sum_G = np.zeros(m)
    sum_lam = np.zeros(m + 1)
    rounds: list[Round] = []
    terminated = Termination.MAX_ROUNDS

    for t in range(1, params.max_rounds + 1):
        lam = state.lam
        pi_t, _ = best_response(mdp, cset, lam[:m], cfg)
        R_t, G_t = evaluate(pi_t)
        counts[pi_t] = counts.get(pi_t, 0) + 1
        sum_R += R_t
        sum_G = sum_G + G_t
        sum_lam = sum_lam + lam
        R_avg, G_avg, lam_avg = sum_R / t, sum_G / t, sum_lam / t

        pi_tilde, _ = best_response(mdp, cset, lam_avg[:m], cfg)
        R_tilde, G_tilde = evaluate(pi_tilde)
        L_max = lagrangian(R_tilde, G_tilde, tau, lam_avg)
        L_min = l_min_exact(R_avg, G_avg, tau, B)
        rounds.append(Round(t, lam, pi_t, R_t, G_t, L_max, L_min))
        if L_max - L_min < params.omega:
            terminated = Termination.GAP_BELOW_OMEGA
            break
        state = eg_update(state, _padded(G_t, tau))

    T = len(rounds)
    mixed = MixedPolicy.from_pairs((c / T, pi) for pi, c in counts.items())
    return SolveResult(
        rounds=tuple(rounds),
        final_policy=mixed,
        final_lambda_avg=lam_avg,
        certified_gap=rounds[-1].gap,
        terminated=terminated,
        objective=R_avg,
        constraint_values=G_avg,
        thresholds=np.array(tau),
        shortfall_bound=shortfall_bound(mdp, cset, B, params.omega),
        atom_values={pi: evaluate.values[pi] for pi in counts},
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trace_header(m: int) -> list[str]:
    return (
        ["round"]
        + [f"lambda_{i}" for i in range(m + 1)]
        + ["L_max", "L_min", "gap", "R_hat"]
        + [f"G_hat_{i}" for i in range(m)]
    )


def write_trace_csv(result: SolveResult, stream: Optional[io.TextIOBase] = None) -> str:
    """Write one row per round; returns the CSV text when ``stream`` is None."""
    m = result.thresholds.shape[0]
    buf = stream if stream is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(m))
    for r in result.rounds:
        w.writerow(
            [r.index]
            + [_fmt(x) for x in r.lam]
            + [_fmt(r.L_max), _fmt(r.L_min), _fmt(r.gap), _fmt(r.R_hat)]
            + [_fmt(x) for x in r.G_hat]
        )
    return buf.getvalue() if stream is None else ""


def policy_document(result: SolveResult) -> dict:
    """JSON-ready description of the returned mixed policy with per-atom robust values."""
    atoms = []
    for w, pi in result.final_policy.atoms:
        vr, vg = result.atom_values[pi]
        atoms.append(
            {
                "weight": w,
                "actions": list(pi.actions),
                "value_r": vr.tolist(),
                "value_g": vg.tolist(),
            }
        )
    return {
        "atoms": atoms,
        "objective": result.objective,
        "constraint_values": result.constraint_values.tolist(),
        "thresholds": result.thresholds.tolist(),
        "lambda_avg": result.final_lambda_avg.tolist(),
        "certified_gap": result.certified_gap,
        "terminated": result.terminated.value,
        "rounds": result.n_rounds,
        "shortfall_bound": result.shortfall_bound,
    }


def mixed_policy_from_document(doc: dict) -> MixedPolicy:
    try:
        pairs = [(float(a["weight"]), DeterministicPolicy(tuple(a["actions"]))) for a in doc["atoms"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed policy document: {exc}") from None
    total = sum(w for w, _ in pairs)
    if not math.isfinite(total) or total <= 0:
        raise ValueError("policy weights must be positive")
    return MixedPolicy.from_pairs((w / total, pi) for w, pi in pairs)
