"""Time the compiled fixed-point loops against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--states 10 50 200] [--repeat 5]
"""

import argparse
import time

import numpy as np

from drcrl import _kernels_py

try:
    from drcrl import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def _instance(rng, S, A):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.uniform(size=(S, A))
    return np.ascontiguousarray(R), np.ascontiguousarray(P)


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--states", type=int, nargs="+", default=[5, 20, 100, 300])
    ap.add_argument("--actions", type=int, default=4)
    ap.add_argument("--gamma", type=float, default=0.95)
    ap.add_argument("--beta", type=float, default=0.1)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels_cy is None:
        print("compiled extension not built; only the fallback is timed")
    rng = np.random.default_rng(args.seed)
    stop = 1e-10 * (1 - args.gamma) / args.gamma
    print(f"{'kernel':<16}{'S':>6}{'python s':>12}{'cython s':>12}{'speedup':>10}{'max diff':>12}")
    for S in args.states:
        R, P = _instance(rng, S, args.actions)
        r, Ppi = np.ascontiguousarray(R[:, 0]), np.ascontiguousarray(P[:, 0])
        cases = {
            "policy_eval": lambda k: k.policy_eval(r, Ppi, args.gamma, args.beta, stop, 100_000)[0],
            "value_iteration": lambda k: k.value_iteration(R, P, args.gamma, args.beta, stop, 100_000)[0],
        }
        for name, call in cases.items():
            tp, vp = _best(lambda: call(_kernels_py), args.repeat)
            if _kernels_cy is None:
                print(f"{name:<16}{S:>6}{tp:>12.4g}{'-':>12}{'-':>10}{'-':>12}")
                continue
            tc, vc = _best(lambda: call(_kernels_cy), args.repeat)
            diff = float(np.max(np.abs(np.asarray(vp) - np.asarray(vc))))
            print(f"{name:<16}{S:>6}{tp:>12.4g}{tc:>12.4g}{tp / tc:>10.1f}{diff:>12.2g}")


if __name__ == "__main__":
    main()
