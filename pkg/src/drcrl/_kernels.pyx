# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled fixed-point loops for tabular Bellman operators.

Every routine applies the R-contamination operator

    v'(s) = r(s) + gamma * ((1 - beta) * <P[s], v> + beta * min(v))

with ``beta = 0`` giving the standard operator.  The arithmetic order matches
:mod:`drcrl._kernels_py` so the two backends agree to rounding.
"""

import numpy as np

from libc.math cimport fabs, INFINITY


cdef inline double _vmin(double[::1] v, Py_ssize_t n) noexcept nogil:
    cdef double m = v[0]
    cdef Py_ssize_t i
    for i in range(1, n):
        if v[i] < m:
            m = v[i]
    return m


def policy_eval(const double[::1] r, const double[:, ::1] P, double gamma, double beta,
                double stop, long max_iters):
    """Iterate the policy operator from v = 0 until the sup change is <= stop.

    Returns ``(v, iterations, last_change)``.
    """
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t s, t
    cdef long it = 0
    cdef double acc, x, d, delta = INFINITY, vmin
    cdef double keep = 1.0 - beta
    v_arr = np.zeros(n)
    w_arr = np.zeros(n)
    cdef double[::1] v = v_arr
    cdef double[::1] w = w_arr
    cdef double[::1] tmp
    with nogil:
        while it < max_iters:
            it += 1
            vmin = _vmin(v, n)
            delta = 0.0
            for s in range(n):
                acc = 0.0
                for t in range(n):
                    acc = acc + P[s, t] * v[t]
                x = r[s] + gamma * (keep * acc + beta * vmin)
                d = fabs(x - v[s])
                if d > delta:
                    delta = d
                w[s] = x
            tmp = v
            v = w
            w = tmp
            if delta <= stop:
                break
    return np.asarray(v), it, delta


def value_iteration(const double[:, ::1] R, const double[:, :, ::1] P, double gamma, double beta,
                    double stop, long max_iters):
    """Optimality-operator iteration from v = 0; returns ``(v, iterations, last_change)``."""
    cdef Py_ssize_t n = R.shape[0]
    cdef Py_ssize_t na = R.shape[1]
    cdef Py_ssize_t s, a, t
    cdef long it = 0
    cdef double acc, q, best, d, delta = INFINITY, vmin
    cdef double keep = 1.0 - beta
    v_arr = np.zeros(n)
    w_arr = np.zeros(n)
    cdef double[::1] v = v_arr
    cdef double[::1] w = w_arr
    cdef double[::1] tmp
    with nogil:
        while it < max_iters:
            it += 1
            vmin = _vmin(v, n)
            delta = 0.0
            for s in range(n):
                best = -INFINITY
                for a in range(na):
                    acc = 0.0
                    for t in range(n):
                        acc = acc + P[s, a, t] * v[t]
                    q = R[s, a] + gamma * (keep * acc + beta * vmin)
                    if q > best:
                        best = q
                d = fabs(best - v[s])
                if d > delta:
                    delta = d
                w[s] = best
            tmp = v
            v = w
            w = tmp
            if delta <= stop:
                break
    return np.asarray(v), it, delta


def q_values(const double[:, ::1] R, const double[:, :, ::1] P, const double[::1] v,
             double gamma, double beta):
    cdef Py_ssize_t n = R.shape[0]
    cdef Py_ssize_t na = R.shape[1]
    cdef Py_ssize_t s, a, t
    cdef double acc
    cdef double keep = 1.0 - beta
    cdef double vmin = v[0]
    for t in range(1, n):
        if v[t] < vmin:
            vmin = v[t]
    q_arr = np.empty((n, na))
    cdef double[:, ::1] Q = q_arr
    for s in range(n):
        for a in range(na):
            acc = 0.0
            for t in range(n):
                acc = acc + P[s, a, t] * v[t]
            Q[s, a] = R[s, a] + gamma * (keep * acc + beta * vmin)
    return q_arr


def apply_policy(const double[::1] r, const double[:, ::1] P, const double[::1] v0,
                 double gamma, double beta, long times):
    """Apply the policy operator ``times`` times to ``v0``."""
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t s, t
    cdef long k
    cdef double acc, vmin
    cdef double keep = 1.0 - beta
    v_arr = np.array(v0, dtype=np.float64)
    w_arr = np.empty(n)
    cdef double[::1] v = v_arr
    cdef double[::1] w = w_arr
    cdef double[::1] tmp
    for k in range(times):
        vmin = _vmin(v, n)
        for s in range(n):
            acc = 0.0
            for t in range(n):
                acc = acc + P[s, t] * v[t]
            w[s] = r[s] + gamma * (keep * acc + beta * vmin)
        tmp = v
        v = w
        w = tmp
    return np.asarray(v)
