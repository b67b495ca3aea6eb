"""Pure-Python fallback for the compiled kernels.

Mirrors ``fedmob._kernels`` operation-for-operation (same arithmetic, same
evaluation order) so the two backends produce bit-identical float64 results;
keep the two files in sync.
"""

import math

import numpy as np


def _rhs_fill(x, rewards, weights, unit_cost, lr, q, u, out, n):
    s = 0.0
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


def replicator_rhs(x, rewards, weights, unit_cost, lr, q):
    n = len(x)
    if len(rewards) != n or len(weights) != n or len(q) != n:
        raise ValueError("parameter vectors must match the state length")
    u = [0.0] * n
    out = [0.0] * n
    _rhs_fill(x, rewards, weights, unit_cost, lr, q, u, out, n)
    return np.asarray(out, dtype=np.float64)


def replicator_path(x0, rewards, weights, unit_cost, lr, q, dt, n_steps):
    """Fixed-step explicit Euler with clamp-and-renormalize projection.

    Returns ``(states, derivs)`` of shape ``(n_steps + 1, n)``; row i holds
    the state after i steps and the growth rates evaluated at that state.
    Raises if a step produces a non-finite or degenerate state.
    """
    n = len(x0)
    if len(rewards) != n or len(weights) != n or len(q) != n:
        raise ValueError("parameter vectors must match the state length")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")

    rewards = [float(v) for v in rewards]
    weights = [float(v) for v in weights]
    q = [float(v) for v in q]
    unit_cost = float(unit_cost)
    lr = float(lr)
    dt = float(dt)

    states = np.empty((n_steps + 1, n), dtype=np.float64)
    derivs = np.empty((n_steps + 1, n), dtype=np.float64)
    x = [float(v) for v in x0]
    u = [0.0] * n
    dx = [0.0] * n
    y = [0.0] * n

    for i in range(n_steps):
        _rhs_fill(x, rewards, weights, unit_cost, lr, q, u, dx, n)
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
        if not (s > 0.0) or not math.isfinite(s):
            raise ValueError(f"non-finite or degenerate state at step {i + 1}")
        for b in range(n):
            x[b] = y[b] / s
    _rhs_fill(x, rewards, weights, unit_cost, lr, q, u, dx, n)
    for b in range(n):
        states[n_steps, b] = x[b]
        derivs[n_steps, b] = dx[b]
    return states, derivs


def _dominates(row_i, row_j):
    strict = False
    for a, b in zip(row_i, row_j):
        if a > b:
            return False
        if a < b:
            strict = True
    return strict


def nondominated_fronts(objs):
    """Partition row indices into Pareto fronts (minimization, Deb's scheme).

    Returns a list of lists of int indices; front 0 is the non-dominated set,
    front h+1 is the non-dominated set once fronts 0..h are removed.
    """
    objs = np.asarray(objs, dtype=np.float64)
    n = objs.shape[0]
    if n == 0:
        return []
    rows = objs.tolist()

    dominated_by = [[] for _ in range(n)]
    dom_count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if _dominates(rows[i], rows[j]):
                dominated_by[i].append(j)
                dom_count[j] += 1
            elif _dominates(rows[j], rows[i]):
                dominated_by[j].append(i)
                dom_count[i] += 1

    fronts = []
    current = [i for i in range(n) if dom_count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for p in current:
            for j in dominated_by[p]:
                dom_count[j] -= 1
                if dom_count[j] == 0:
                    nxt.append(j)
        nxt.sort()
        current = nxt
    return fronts
