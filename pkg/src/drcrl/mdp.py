"""Tabular constrained MDP data model, validation, serialization and policy algebra."""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

ROW_SUM_TOL = 1e-9
MIX_SUM_TOL = 1e-12


class ParseError(ValueError):
    """Raised when an MDP document does not match the file schema."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ValidationError(ValueError):
    """Raised when a parsed MDP violates one or more invariants."""

    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} invariant violation(s): {lines}")


class MissingPolicyError(KeyError):
    pass


class Violation(NamedTuple):
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.where}: {self.message}"


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteCMDP:
    """Constrained MDP with nominal kernel ``kernel[s, a, s']``.

    ``constraints`` has shape ``(m, S, A)``; ``m = 0`` is allowed and reduces
    the problem to plain robust RL.
    """

    n_states: int
    n_actions: int
    kernel: np.ndarray
    reward: np.ndarray
    constraints: np.ndarray
    thresholds: np.ndarray
    discount: float
    initial_dist: np.ndarray
    fail_state: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kernel", _frozen(self.kernel))
        object.__setattr__(self, "reward", _frozen(self.reward))
        cons = np.array(self.constraints, dtype=float)
        if cons.size == 0:
            cons = cons.reshape((0, self.n_states, self.n_actions))
        object.__setattr__(self, "constraints", _frozen(cons))
        object.__setattr__(self, "thresholds", _frozen(np.ravel(self.thresholds)))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_constraints(self) -> int:
        return int(self.constraints.shape[0])

    @property
    def reward_max(self) -> float:
        return float(self.reward.max()) if self.reward.size else 0.0

    @property
    def constraint_max(self) -> float:
        return float(self.constraints.max()) if self.constraints.size else 0.0

    def signal(self, index: int) -> np.ndarray:
        """Reward matrix for signal ``index``: 0 is the objective, ``i + 1`` is constraint ``i``."""
        return self.reward if index == 0 else self.constraints[index - 1]

    def replace(self, **changes) -> "FiniteCMDP":
        fields = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "kernel": self.kernel,
            "reward": self.reward,
            "constraints": self.constraints,
            "thresholds": self.thresholds,
            "discount": self.discount,
            "initial_dist": self.initial_dist,
            "fail_state": self.fail_state,
        }
        fields.update(changes)
        return FiniteCMDP(**fields)


@dataclass(frozen=True)
class ContaminationSet:
    """R-contamination set ``{(1 - beta) P°[s, a] + beta q : q in the simplex}``."""

    beta: float

    def __post_init__(self):
        b = float(self.beta)
        if not (0.0 <= b <= 1.0):
            raise ValueError(f"beta must lie in [0, 1], got {self.beta!r}")
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True, order=True)
class DeterministicPolicy:
    actions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    @classmethod
    def from_array(cls, arr) -> "DeterministicPolicy":
        return cls(tuple(int(a) for a in np.asarray(arr).ravel()))

    def as_array(self) -> np.ndarray:
        return np.array(self.actions, dtype=np.intp)

    def __len__(self) -> int:
        return len(self.actions)

    def check(self, mdp: FiniteCMDP) -> None:
        if len(self.actions) != mdp.n_states:
            raise ValueError(f"policy covers {len(self.actions)} states, MDP has {mdp.n_states}")
        bad = [s for s, a in enumerate(self.actions) if not 0 <= a < mdp.n_actions]
        if bad:
            raise ValueError(f"invalid action index at states {bad}")


@dataclass(frozen=True)
class MixedPolicy:
    """Categorical mixture of deterministic policies, sampled once per episode.

    Construct through :meth:`from_pairs`, which merges duplicate policies.
    """

    atoms: tuple[tuple[float, DeterministicPolicy], ...]

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("a mixed policy needs at least one atom")
        seen = set()
        total = 0.0
        for w, pi in self.atoms:
            if not (0.0 < w <= 1.0 + MIX_SUM_TOL):
                raise ValueError(f"atom weight {w} outside (0, 1]")
            if pi in seen:
                raise ValueError("duplicate policy among atoms; use MixedPolicy.from_pairs")
            seen.add(pi)
            total += w
        if abs(total - 1.0) > MIX_SUM_TOL:
            raise ValueError(f"atom weights sum to {total!r}, expected 1")

    @classmethod
    def from_pairs(cls, pairs) -> "MixedPolicy":
        merged: dict[DeterministicPolicy, float] = {}
        for w, pi in pairs:
            merged[pi] = merged.get(pi, 0.0) + float(w)
        return cls(tuple((w, pi) for pi, w in merged.items() if w > 0.0))

    @classmethod
    def single(cls, policy: DeterministicPolicy) -> "MixedPolicy":
        return cls(((1.0, policy),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.atoms])

    @property
    def policies(self) -> list[DeterministicPolicy]:
        return [pi for _, pi in self.atoms]


def mixed_value(policy: MixedPolicy, per_policy_values: Mapping[DeterministicPolicy, np.ndarray]) -> np.ndarray:
    """Weighted sum of the atoms' value functions (no re-solve)."""
    total = None
    for w, pi in policy.atoms:
        try:
            v = np.asarray(per_policy_values[pi], dtype=float)
        except KeyError:
            raise MissingPolicyError(pi) from None
        total = w * v if total is None else total + w * v
    return total


def scalar_value(v, mu) -> float:
    v = np.asarray(v, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if v.shape != mu.shape:
        raise ValueError(f"value has shape {v.shape}, distribution has shape {mu.shape}")
    return float(v @ mu)


def validate(mdp: FiniteCMDP) -> list[Violation]:
    """List every violated invariant of ``mdp``; an empty list means valid."""
    out: list[Violation] = []
    S, A = mdp.n_states, mdp.n_actions
    if not isinstance(S, (int, np.integer)) or S < 1:
        out.append(Violation("n_states", f"must be a positive integer, got {S!r}"))
    if not isinstance(A, (int, np.integer)) or A < 1:
        out.append(Violation("n_actions", f"must be a positive integer, got {A!r}"))
    if out:
        return out

    shapes_ok = True
    expected = {
        "kernel": (mdp.kernel, (S, A, S)),
        "reward": (mdp.reward, (S, A)),
        "initial_dist": (mdp.initial_dist, (S,)),
    }
    for name, (arr, shape) in expected.items():
        if arr.shape != shape:
            out.append(Violation(name, f"shape {arr.shape}, expected {shape}"))
            shapes_ok = False
    cons = mdp.constraints
    if cons.ndim != 3 or cons.shape[1:] != (S, A):
        out.append(Violation("constraints", f"shape {cons.shape}, expected (m, {S}, {A})"))
        shapes_ok = False
    elif mdp.thresholds.shape != (cons.shape[0],):
        out.append(
            Violation("thresholds", f"length {mdp.thresholds.size} does not match {cons.shape[0]} constraint matrices")
        )

    if not (math.isfinite(mdp.discount) and 0.0 <= mdp.discount < 1.0):
        out.append(Violation("discount", f"must lie in [0, 1), got {mdp.discount!r}"))
    if not np.all(np.isfinite(mdp.thresholds)):
        out.append(Violation("thresholds", "non-finite entry"))
    if not shapes_ok:
        return out

    P = mdp.kernel
    for s in range(S):
        for a in range(A):
            row = P[s, a]
            if not np.all(np.isfinite(row)):
                out.append(Violation(f"kernel[{s}][{a}]", "non-finite entry"))
                continue
            if np.any(row < 0.0):
                out.append(Violation(f"kernel[{s}][{a}]", f"negative entry {row.min()!r}"))
            rs = float(row.sum())
            if abs(rs - 1.0) > ROW_SUM_TOL:
                out.append(Violation(f"kernel[{s}][{a}]", f"row sum {rs:.12g}"))

    for s, a in zip(*np.nonzero(~np.isfinite(mdp.reward))):
        out.append(Violation(f"reward[{s}][{a}]", "non-finite entry"))
    for s, a in zip(*np.nonzero(np.isfinite(mdp.reward) & (mdp.reward < 0.0))):
        out.append(Violation(f"reward[{s}][{a}]", f"negative value {mdp.reward[s, a]!r}"))
    for i, s, a in zip(*np.nonzero(~np.isfinite(cons))):
        out.append(Violation(f"constraints[{i}][{s}][{a}]", "non-finite entry"))
    for i, s, a in zip(*np.nonzero(np.isfinite(cons) & (cons < 0.0))):
        out.append(Violation(f"constraints[{i}][{s}][{a}]", f"negative value {cons[i, s, a]!r}"))

    mu = mdp.initial_dist
    if not np.all(np.isfinite(mu)):
        out.append(Violation("initial_dist", "non-finite entry"))
    else:
        if np.any(mu < 0.0):
            out.append(Violation("initial_dist", f"negative entry {mu.min()!r}"))
        if abs(float(mu.sum()) - 1.0) > ROW_SUM_TOL:
            out.append(Violation("initial_dist", f"sums to {float(mu.sum()):.12g}"))

    sf = mdp.fail_state
    if sf is not None:
        if not isinstance(sf, (int, np.integer)) or not 0 <= sf < S:
            out.append(Violation("fail_state", f"index {sf!r} outside [0, {S})"))
        else:
            for a in range(A):
                if mdp.reward[sf, a] != 0.0:
                    out.append(Violation(f"reward[{sf}][{a}]", "fail-state reward must be 0"))
                for i in range(cons.shape[0]):
                    if cons[i, sf, a] != 0.0:
                        out.append(Violation(f"constraints[{i}][{sf}][{a}]", "fail-state constraint reward must be 0"))
                if P[sf, a, sf] != 1.0:
                    out.append(Violation(f"kernel[{sf}][{a}]", "fail state must be absorbing"))
    return out


_FIELDS = ("n_states", "n_actions", "discount", "kernel", "reward", "constraints", "thresholds", "initial_dist", "fail_state")


def _require_number(doc, key):
    x = doc[key]
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ParseError(key, f"expected a number, got {type(x).__name__}")
    return x


def _nested(doc, key, depth):
    def walk(x, d, path):
        if d == 0:
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise ParseError(path, f"expected a number, got {type(x).__name__}")
            return float(x)
        if not isinstance(x, list):
            raise ParseError(path, "expected a list")
        return [walk(y, d - 1, f"{path}[{i}]") for i, y in enumerate(x)]

    return walk(doc[key], depth, key)


def _rect(data, path):
    try:
        return np.array(data, dtype=float)
    except ValueError:
        raise ParseError(path, "ragged nested list") from None


def parse_mdp(text: str) -> FiniteCMDP:
    """Parse an MDP document without validating invariants."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if not isinstance(doc, dict):
        raise ParseError("<root>", "expected a JSON object")
    unknown = sorted(set(doc) - set(_FIELDS))
    if unknown:
        raise ParseError(unknown[0], "unknown field")
    for key in _FIELDS:
        if key not in doc:
            raise ParseError(key, "missing required field")

    S, A = doc["n_states"], doc["n_actions"]
    for key in ("n_states", "n_actions"):
        if isinstance(doc[key], bool) or not isinstance(doc[key], int):
            raise ParseError(key, "expected an integer")
    discount = _require_number(doc, "discount")
    kernel = _rect(_nested(doc, "kernel", 3), "kernel")
    reward = _rect(_nested(doc, "reward", 2), "reward")
    cons_raw = _nested(doc, "constraints", 3)
    constraints = _rect(cons_raw, "constraints") if cons_raw else np.zeros((0, max(S, 0), max(A, 0)))
    thresholds = np.array(_nested(doc, "thresholds", 1), dtype=float)
    mu = np.array(_nested(doc, "initial_dist", 1), dtype=float)
    sf = doc["fail_state"]
    if sf is not None and (isinstance(sf, bool) or not isinstance(sf, int)):
        raise ParseError("fail_state", "expected an integer or null")
    return FiniteCMDP(S, A, kernel, reward, constraints, thresholds, discount, mu, sf)


def load_mdp(text: str) -> FiniteCMDP:
    mdp = parse_mdp(text)
    violations = validate(mdp)
    if violations:
        raise ValidationError(violations)
    return mdp


def mdp_to_dict(mdp: FiniteCMDP) -> dict:
    return {
        "n_states": int(mdp.n_states),
        "n_actions": int(mdp.n_actions),
        "discount": mdp.discount,
        "kernel": mdp.kernel.tolist(),
        "reward": mdp.reward.tolist(),
        "constraints": mdp.constraints.tolist(),
        "thresholds": mdp.thresholds.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
        "fail_state": None if mdp.fail_state is None else int(mdp.fail_state),
    }


def dump_mdp(mdp: FiniteCMDP, indent: Optional[int] = None) -> str:
    # json writes floats with repr(), which round-trips binary64 exactly
    return json.dumps(mdp_to_dict(mdp), indent=indent)
