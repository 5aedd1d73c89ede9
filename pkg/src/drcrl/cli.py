"""Command-line entry point: ``drcrl {solve,counterexample,sweep,eval}``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from drcrl import counterexample as cx
from drcrl.game import SolveParams, Termination, mixed_policy_from_document, policy_document, solve, write_trace_csv
from drcrl.harness import ShiftKind, ShiftSpec, beta_sweep, evaluate_under_shift, write_sweep_csv
from drcrl.mdp import ContaminationSet, FiniteCMDP, ParseError, ValidationError, load_mdp
from drcrl.robust import RobustEvalConfig

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_BUDGET, EXIT_MISMATCH = 0, 1, 2, 3, 4
DEFAULT_MAGNITUDES = ",".join(f"{k / 100:g}" for k in range(0, 21))


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RunConfig:
    mdp_path: Path
    beta: float = 0.0
    B: float = 30.0
    eta: float = 0.05
    omega: float = 0.01
    max_rounds: int = 200
    tol: float = 1e-10
    output_dir: Path = Path("out")
    seed: int = 0

    def check(self) -> None:
        def bad(name, why):
            raise CliError(EXIT_CONFIG, f"config field {name!r}: {why}")

        if not (math.isfinite(self.beta) and 0.0 <= self.beta < 1.0):
            bad("beta", f"must lie in [0, 1), got {self.beta!r}")
        for name in ("B", "eta", "omega", "tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                bad(name, f"must be a positive finite number, got {v!r}")
        if self.max_rounds < 1:
            bad("max_rounds", f"must be >= 1, got {self.max_rounds!r}")

    @property
    def params(self) -> SolveParams:
        return SolveParams(self.B, self.eta, self.omega, self.max_rounds)

    @property
    def eval_config(self) -> RobustEvalConfig:
        return RobustEvalConfig(tol=self.tol)


_TYPES = {"mdp_path": str, "beta": float, "B": float, "eta": float, "omega": float, "max_rounds": int, "tol": float, "output_dir": str, "seed": int}


def load_config(path: Path) -> RunConfig:
    """Read a JSON run config; ``mdp_path`` is resolved against the config's directory."""
    text = _read(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, f"{path}: expected a JSON object")
    known = {f.name for f in fields(RunConfig)}
    for key in doc:
        if key not in known:
            raise CliError(EXIT_CONFIG, f"config field {key!r}: unknown field")
    if "mdp_path" not in doc:
        raise CliError(EXIT_CONFIG, "config field 'mdp_path': missing required field")
    vals = {}
    for key, x in doc.items():
        typ = _TYPES[key]
        ok = isinstance(x, str) if typ is str else (not isinstance(x, bool) and isinstance(x, (int, float) if typ is float else int))
        if not ok:
            raise CliError(EXIT_CONFIG, f"config field {key!r}: expected {typ.__name__}, got {type(x).__name__}")
        vals[key] = typ(x)
    mdp_path = Path(vals.pop("mdp_path"))
    if not mdp_path.is_absolute():
        mdp_path = path.parent / mdp_path
    if "output_dir" in vals:
        vals["output_dir"] = Path(vals["output_dir"])
    return RunConfig(mdp_path=mdp_path, **vals)


def _read(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


def read_mdp(path: Path) -> FiniteCMDP:
    text = _read(path)
    try:
        return load_mdp(text)
    except (ParseError, ValidationError) as exc:
        raise CliError(EXIT_CONFIG, f"{path}: {exc}") from None


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    over = {}
    for flag, name in (("beta", "beta"), ("bound", "B"), ("eta", "eta"), ("omega", "omega"), ("max_rounds", "max_rounds"), ("tol", "tol"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            over[name] = v
    if getattr(args, "out", None) is not None:
        over["output_dir"] = Path(args.out)
    return replace(cfg, **over)


def cmd_solve(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _apply_overrides(load_config(Path(args.config)), args)
    cfg.check()
    mdp = read_mdp(cfg.mdp_path)
    if cfg.beta > 0 and mdp.fail_state is None:
        raise CliError(EXIT_CONFIG, "config field 'beta': contamination needs an MDP with a fail state")
    res = solve(mdp, ContaminationSet(cfg.beta), cfg.params, cfg.eval_config)
    _write(cfg.output_dir / "trace.csv", write_trace_csv(res))
    _write(cfg.output_dir / "policy.json", json.dumps(policy_document(res), indent=2) + "\n")
    print(f"terminated: {res.terminated.value} after {res.n_rounds} rounds", file=out)
    print(f"certified_gap: {_fmt(res.certified_gap)}", file=out)
    print(f"objective: {_fmt(res.objective)}", file=out)
    for i, (g, t) in enumerate(zip(res.constraint_values, res.thresholds)):
        print(f"constraint_{i}: {_fmt(g)} (threshold {_fmt(t)})", file=out)
    print(f"atoms: {len(res.final_policy.atoms)}", file=out)
    print(f"wrote {cfg.output_dir / 'trace.csv'} and {cfg.output_dir / 'policy.json'}", file=out)
    return EXIT_OK if res.terminated is Termination.GAP_BELOW_OMEGA else EXIT_BUDGET


def _fraction(x) -> str:
    return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)


def cmd_counterexample(args, out=None) -> int:
    out = out or sys.stdout
    step = args.grid_step
    if not 0.0 < step <= 1e-3:
        raise CliError(EXIT_CONFIG, f"--grid-step must lie in (0, 0.001], got {step!r}")
    mdp = cx.IntervalKernelMDP()
    rep = cx.verify(step, mdp)
    v = rep.values
    print(f"gamma = {_fmt(mdp.gamma)}, xi in [{_fmt(mdp.xi_lo)}, {_fmt(mdp.xi_hi)}]", file=out)
    for name, got, exact in (
        ("V_r(pi1)", v.v1_r, cx.CLOSED_V1R),
        ("V_g(pi1)", v.v1_g, cx.CLOSED_V1G),
        ("V_r(pi2)", v.v2_r, cx.CLOSED_V2R),
        ("V_g(pi2)", v.v2_g, cx.CLOSED_V2G),
    ):
        print(f"{name} = [{_fmt(got[0])}, {_fmt(got[1])}]  exact [{_fraction(exact[0])}, {_fraction(exact[1])}]", file=out)
    lo, hi = rep.interval
    marks = sorted({0.0, 0.5, 1.0, 1.5, 2.0, 5.0} | ({lo, hi} if math.isfinite(lo) else set()))
    print("lambda,v1(s0),v2(s0),|delta(s0)|,||delta||_inf,violated", file=out)
    for row in cx.table(marks, mdp):
        print(",".join(_fmt(x) for x in row[:5]) + f",{'yes' if row[5] else 'no'}", file=out)
    elo, ehi = cx.CLOSED_INTERVAL
    print(f"violation interval: [{_fmt(lo)}, {_fmt(hi)}] at grid step {step:g}", file=out)
    print(f"exact interval: [{_fraction(elo)}, {_fraction(ehi)}] = [{float(elo):.6f}, {float(ehi):.6f}]", file=out)
    if not rep.ok:
        for m in rep.mismatches:
            print(f"MISMATCH: {m}", file=sys.stderr)
        return EXIT_MISMATCH
    print("verified", file=out)
    return EXIT_OK


def _float_list(text: str, what: str) -> list[float]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise CliError(EXIT_CONFIG, f"{what} must list at least one value")
    try:
        return [float(t) for t in items]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"{what} must be comma-separated numbers, got {text!r}") from None


def cmd_sweep(args, out=None) -> int:
    out = out or sys.stdout
    betas = _float_list(args.betas, "--betas")
    mags = _float_list(args.magnitudes, "--magnitudes")
    if any(not 0.0 <= b < 1.0 for b in betas):
        raise CliError(EXIT_CONFIG, f"--betas entries must lie in [0, 1), got {betas}")
    if any(not 0.0 <= x <= 1.0 for x in mags):
        raise CliError(EXIT_CONFIG, f"--magnitudes entries must lie in [0, 1], got {mags}")
    cfg = _apply_overrides(load_config(Path(args.config)), args)
    cfg.check()
    mdp = read_mdp(cfg.mdp_path)
    if max(betas) > 0 and mdp.fail_state is None:
        raise CliError(EXIT_CONFIG, "--betas: contamination needs an MDP with a fail state")
    res = beta_sweep(mdp, betas, mags, cfg.params, cfg.eval_config, seed=cfg.seed)
    path = cfg.output_dir / "sweep.csv"
    _write(path, write_sweep_csv(res))
    for b in betas:
        fr = res.frontier(b)
        print(f"beta {_fmt(b)}: worst-case frontier {_fmt(fr) if math.isfinite(fr) else 'none'} ({res.solves[b].terminated.value})", file=out)
    print(f"wrote {path}", file=out)
    return EXIT_OK


def cmd_eval(args, out=None) -> int:
    out = out or sys.stdout
    mdp = read_mdp(Path(args.mdp))
    try:
        policy = mixed_policy_from_document(json.loads(_read(Path(args.policy))))
        for pi in policy.policies:
            pi.check(mdp)
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"{args.policy}: {exc}") from None
    if not 0.0 <= args.magnitude <= 1.0:
        raise CliError(EXIT_CONFIG, f"--magnitude must lie in [0, 1], got {args.magnitude!r}")
    kernel = None
    if args.shift == "file":
        if args.kernel is None:
            raise CliError(EXIT_CONFIG, "--shift file needs --kernel PATH")
        try:
            kernel = np.array(json.loads(_read(Path(args.kernel))), dtype=float)
        except (ValueError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_CONFIG, f"{args.kernel}: {exc}") from None
    kind = {"worst": ShiftKind.WORST_CASE, "random": ShiftKind.RANDOM_CONTAMINATION, "file": ShiftKind.EXPLICIT_KERNEL}[args.shift]
    try:
        spec = ShiftSpec(kind, args.magnitude, args.seed, kernel)
        obj, cons, sat = evaluate_under_shift(policy, mdp, spec, args.gamma_eval)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    print("objective," + ",".join(f"g_{i}" for i in range(len(cons))) + "," + ",".join(f"satisfied_{i}" for i in range(len(cons))), file=out)
    print(",".join([_fmt(obj)] + [_fmt(c) for c in cons] + [str(int(s)) for s in sat]), file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drcrl", description="Robust constrained tabular RL under R-contamination.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the primal-dual game on one instance")
    s.add_argument("--config", required=True)
    s.add_argument("--beta", type=float)
    s.add_argument("--bound", type=float, help="l1 bound B on the multiplier")
    s.add_argument("--eta", type=float)
    s.add_argument("--omega", type=float)
    s.add_argument("--max-rounds", type=int, dest="max_rounds")
    s.add_argument("--tol", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("counterexample", help="verify the two-state counterexample")
    c.add_argument("--grid-step", type=float, default=1e-3, dest="grid_step")
    c.set_defaults(func=cmd_counterexample)

    w = sub.add_parser("sweep", help="train over several beta and deploy under shifts")
    w.add_argument("--config", required=True)
    w.add_argument("--betas", required=True)
    w.add_argument("--magnitudes", default=DEFAULT_MAGNITUDES)
    w.add_argument("--bound", type=float)
    w.add_argument("--eta", type=float)
    w.add_argument("--omega", type=float)
    w.add_argument("--max-rounds", type=int, dest="max_rounds")
    w.add_argument("--seed", type=int)
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="evaluate a saved mixed policy under a shift")
    e.add_argument("--policy", required=True)
    e.add_argument("--mdp", required=True)
    e.add_argument("--shift", choices=("worst", "random", "file"), required=True)
    e.add_argument("--magnitude", type=float, default=0.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--kernel", help="JSON (S, A, S) kernel for --shift file")
    e.add_argument("--gamma-eval", type=float, dest="gamma_eval")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"drcrl: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
