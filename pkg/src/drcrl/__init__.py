"""Tabular distributionally robust constrained RL under R-contamination uncertainty."""

from drcrl.best_response import best_response, scalarize
from drcrl.game import DualState, SolveParams, SolveResult, eg_update, l_min_exact, lagrangian, solve
from drcrl.harness import OracleSolution, ShiftKind, ShiftSpec, beta_sweep, evaluate_under_shift, oracle_solve
from drcrl.kernels import BACKEND
from drcrl.mdp import (
    ContaminationSet,
    DeterministicPolicy,
    FiniteCMDP,
    MixedPolicy,
    dump_mdp,
    load_mdp,
    mixed_value,
    scalar_value,
    validate,
)
from drcrl.robust import RobustEvalConfig, robust_optimal, robust_policy_eval, robust_values, worst_case_kernel

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ContaminationSet",
    "DeterministicPolicy",
    "DualState",
    "FiniteCMDP",
    "MixedPolicy",
    "OracleSolution",
    "RobustEvalConfig",
    "ShiftKind",
    "ShiftSpec",
    "SolveParams",
    "SolveResult",
    "best_response",
    "beta_sweep",
    "dump_mdp",
    "eg_update",
    "evaluate_under_shift",
    "l_min_exact",
    "lagrangian",
    "load_mdp",
    "mixed_value",
    "oracle_solve",
    "robust_optimal",
    "robust_policy_eval",
    "robust_values",
    "scalar_value",
    "scalarize",
    "solve",
    "validate",
    "worst_case_kernel",
]
