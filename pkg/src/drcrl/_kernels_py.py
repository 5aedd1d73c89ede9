"""Pure-numpy fallback for :mod:`drcrl._kernels` (same signatures and update order)."""

import numpy as np


def policy_eval(r, P, gamma, beta, stop, max_iters):
    r = np.asarray(r, dtype=float)
    P = np.asarray(P, dtype=float)
    keep = 1.0 - beta
    v = np.zeros(r.shape[0])
    it = 0
    delta = np.inf
    while it < max_iters:
        it += 1
        w = r + gamma * (keep * (P @ v) + beta * v.min())
        delta = float(np.max(np.abs(w - v)))
        v = w
        if delta <= stop:
            break
    return v, it, delta


def value_iteration(R, P, gamma, beta, stop, max_iters):
    R = np.asarray(R, dtype=float)
    P = np.asarray(P, dtype=float)
    keep = 1.0 - beta
    v = np.zeros(R.shape[0])
    it = 0
    delta = np.inf
    while it < max_iters:
        it += 1
        w = (R + gamma * (keep * (P @ v) + beta * v.min())).max(axis=1)
        delta = float(np.max(np.abs(w - v)))
        v = w
        if delta <= stop:
            break
    return v, it, delta


def q_values(R, P, v, gamma, beta):
    v = np.asarray(v, dtype=float)
    return np.asarray(R, dtype=float) + gamma * ((1.0 - beta) * (np.asarray(P, dtype=float) @ v) + beta * v.min())


def apply_policy(r, P, v0, gamma, beta, times):
    r = np.asarray(r, dtype=float)
    P = np.asarray(P, dtype=float)
    keep = 1.0 - beta
    v = np.array(v0, dtype=float)
    for _ in range(times):
        v = r + gamma * (keep * (P @ v) + beta * v.min())
    return v
