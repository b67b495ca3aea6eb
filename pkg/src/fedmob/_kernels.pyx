# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: replicator-dynamics integration and Pareto sorting.

These mirror ``fedmob._pykernels`` operation-for-operation so both backends
produce bit-identical float64 results; keep the two files in sync.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport isfinite

cnp.import_array()


cdef int _rhs_fill(const double* x, const double* rewards, const double* weights,
                   double unit_cost, double lr, const double* q,
                   double* u, double* out, Py_ssize_t n) except -1:
    """Growth rates for region shares: lr * x_b * sum_c x_c * (u_b - u_c).

    The pairwise-difference form equals x_b * (u_b - mean utility) on the
    simplex and yields exact zeros at vertices and equal-utility states.
    """
    cdef Py_ssize_t b, c
    cdef double s = 0.0
    cdef double acc
    for b in range(n):
        s += x[b] * weights[b]
    if not (s > 0.0):
        raise ValueError("weighted population mass must be positive")
    for b in range(n):
        u[b] = rewards[b] * (x[b] * weights[b] / s) - unit_cost * q[b]
    for b in range(n):
        acc = 0.0
        for c in range(n):
            acc += x[c] * (u[b] - u[c])
        out[b] = lr * x[b] * acc
    return 0


def replicator_rhs(const double[::1] x, const double[::1] rewards,
                   const double[::1] weights, double unit_cost, double lr,
                   const double[::1] q):
    cdef Py_ssize_t n = x.shape[0]
    if rewards.shape[0] != n or weights.shape[0] != n or q.shape[0] != n:
        raise ValueError("parameter vectors must match the state length")
    out_arr = np.empty(n, dtype=np.float64)
    u_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] u = u_arr
    _rhs_fill(&x[0], &rewards[0], &weights[0], unit_cost, lr, &q[0], &u[0], &out[0], n)
    return out_arr


def replicator_path(const double[::1] x0, const double[::1] rewards,
                    const double[::1] weights, double unit_cost, double lr,
                    const double[::1] q, double dt, Py_ssize_t n_steps):
    """Fixed-step explicit Euler with clamp-and-renormalize projection.

    Returns ``(states, derivs)`` of shape ``(n_steps + 1, n)``; row i holds
    the state after i steps and the growth rates evaluated at that state.
    Raises if a step produces a non-finite or degenerate state.
    """
    cdef Py_ssize_t n = x0.shape[0]
    if rewards.shape[0] != n or weights.shape[0] != n or q.shape[0] != n:
        raise ValueError("parameter vectors must match the state length")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")

    states_arr = np.empty((n_steps + 1, n), dtype=np.float64)
    derivs_arr = np.empty((n_steps + 1, n), dtype=np.float64)
    cdef double[:, ::1] states = states_arr
    cdef double[:, ::1] derivs = derivs_arr
    x_arr = np.array(x0, dtype=np.float64, copy=True)
    u_arr = np.empty(n, dtype=np.float64)
    dx_arr = np.empty(n, dtype=np.float64)
    y_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] u = u_arr
    cdef double[::1] dx = dx_arr
    cdef double[::1] y = y_arr

    cdef Py_ssize_t i, b
    cdef double s, v
    for i in range(n_steps):
        _rhs_fill(&x[0], &rewards[0], &weights[0], unit_cost, lr, &q[0], &u[0], &dx[0], n)
        for b in range(n):
            states[i, b] = x[b]
            derivs[i, b] = dx[b]
        s = 0.0
        for b in range(n):
            v = x[b] + dt * dx[b]
            if v < 0.0:
                v = 0.0
            elif v > 1.0:
                v = 1.0
            y[b] = v
            s += v
        if not (s > 0.0) or not isfinite(s):
            raise ValueError(f"non-finite or degenerate state at step {i + 1}")
        for b in range(n):
            x[b] = y[b] / s
    _rhs_fill(&x[0], &rewards[0], &weights[0], unit_cost, lr, &q[0], &u[0], &dx[0], n)
    for b in range(n):
        states[n_steps, b] = x[b]
        derivs[n_steps, b] = dx[b]
    return states_arr, derivs_arr


cdef inline int _dominates(const double* objs, Py_ssize_t m, Py_ssize_t i, Py_ssize_t j):
    cdef Py_ssize_t k
    cdef int strict = 0
    for k in range(m):
        if objs[i * m + k] > objs[j * m + k]:
            return 0
        if objs[i * m + k] < objs[j * m + k]:
            strict = 1
    return strict


def nondominated_fronts(const double[:, ::1] objs):
    """Partition row indices into Pareto fronts (minimization, Deb's scheme).

    Returns a list of lists of int indices; front 0 is the non-dominated set,
    front h+1 is the non-dominated set once fronts 0..h are removed.
    """
    cdef Py_ssize_t n = objs.shape[0]
    cdef Py_ssize_t m = objs.shape[1]
    if n == 0:
        return []

    dominated_by_arr = np.empty(n * n, dtype=np.intp)
    dom_count_arr = np.zeros(n, dtype=np.intp)
    n_dominated_arr = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] dominated_by = dominated_by_arr
    cdef Py_ssize_t[::1] dom_count = dom_count_arr
    cdef Py_ssize_t[::1] n_dominated = n_dominated_arr

    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(i + 1, n):
            if _dominates(&objs[0, 0], m, i, j):
                dominated_by[i * n + n_dominated[i]] = j
                n_dominated[i] += 1
                dom_count[j] += 1
            elif _dominates(&objs[0, 0], m, j, i):
                dominated_by[j * n + n_dominated[j]] = i
                n_dominated[j] += 1
                dom_count[i] += 1

    fronts = []
    current = [i for i in range(n) if dom_count[i] == 0]
    cdef Py_ssize_t p, k
    while current:
        fronts.append(current)
        nxt = []
        for p in current:
            for k in range(n_dominated[p]):
                j = dominated_by[p * n + k]
                dom_count[j] -= 1
                if dom_count[j] == 0:
                    nxt.append(j)
        nxt.sort()
        current = nxt
    return fronts
