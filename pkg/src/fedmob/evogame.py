"""Replicator dynamics for region-selection strategies.

State is the vector of region membership proportions on the probability
simplex. A region's utility is its reward weighted by the population's data
contribution share minus a capacity-proportional training cost; shares grow
in proportion to their excess utility over the population average. The
module provides the dynamic itself, a fixed-step Euler integrator,
equilibrium detection, and numerical probes for the stability argument
(quadratic Lyapunov function, Lipschitz bound on the vector field).
"""

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Sequence, Union

import numpy as np

from fedmob import _backend

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PopulationState:
    """Proportions of users selecting each region; lives on the simplex."""

    x: np.ndarray

    def __init__(self, x: Iterable[float]):
        arr = np.asarray(x, dtype=np.float64).copy()
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("state must be a non-empty 1-D vector")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("state components must lie in [0, 1]")
        if abs(float(arr.sum()) - 1.0) > SIMPLEX_TOL:
            raise ValueError("state components must sum to 1")
        arr.flags.writeable = False
        object.__setattr__(self, "x", arr)

    @classmethod
    def from_proportions(cls, values: Iterable[float]) -> "PopulationState":
        """Normalize arbitrary non-negative proportions onto the simplex."""
        arr = np.asarray(values, dtype=np.float64)
        if np.any(arr < 0.0):
            raise ValueError("proportions must be non-negative")
        total = float(arr.sum())
        if total <= 0.0:
            raise ValueError("proportions must have positive mass")
        return cls(arr / total)

    def __len__(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class GameParams:
    """Region-level game parameters.

    rewards: reward pool per region. data_volume: per-user data volume proxy
    per region (aggregate weight in the contribution share). unit_cost:
    training cost per unit of channel capacity. learning_rate: strategy
    adaptation rate of the dynamic.
    """

    rewards: tuple
    data_volume: tuple
    unit_cost: float
    learning_rate: float

    def __init__(self, rewards: Sequence[float], data_volume: Sequence[float],
                 unit_cost: float, learning_rate: float):
        rewards = tuple(float(r) for r in rewards)
        data_volume = tuple(float(m) for m in data_volume)
        if len(rewards) < 1:
            raise ValueError("at least one region is required")
        if len(data_volume) != len(rewards):
            raise ValueError("data_volume length must match rewards")
        if any(not math.isfinite(r) for r in rewards):
            raise ValueError("rewards must be finite")
        if any(m <= 0 or not math.isfinite(m) for m in data_volume):
            raise ValueError("data volumes must be positive and finite")
        if unit_cost < 0 or not math.isfinite(unit_cost):
            raise ValueError("unit_cost must be non-negative and finite")
        if not (learning_rate > 0 and math.isfinite(learning_rate)):
            raise ValueError("learning_rate must be positive and finite")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "data_volume", data_volume)
        object.__setattr__(self, "unit_cost", float(unit_cost))
        object.__setattr__(self, "learning_rate", float(learning_rate))

    @property
    def n_regions(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Integration record: one row per step, plus growth rates at each state."""

    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.states) == len(self.derivatives)):
            raise ValueError("times, states and derivatives must have equal length")

    @property
    def n_regions(self) -> int:
        return self.states.shape[1]

    def final_state(self) -> PopulationState:
        return PopulationState(self.states[-1])

    def write_csv(self, f: Union[str, IO[str]]) -> None:
        """Columns: t, x_1..x_B, dx_1..dx_B."""
        own = isinstance(f, str)
        fh = open(f, "w", newline="") if own else f
        try:
            b = self.n_regions
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x_{i + 1}" for i in range(b)]
                            + [f"dx_{i + 1}" for i in range(b)])
            for t, x, dx in zip(self.times, self.states, self.derivatives):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in x]
                                + [repr(float(v)) for v in dx])
        finally:
            if own:
                fh.close()


@dataclass(frozen=True)
class EquilibriumReport:
    """First time from which the dynamic stays below tolerance."""

    time: float
    index: int
    state: PopulationState


def _q_vector(q: Union[float, Sequence[float]], n: int) -> np.ndarray:
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError("capacity vector length must match the number of regions")
    if np.any(~np.isfinite(arr)):
        raise ValueError("capacities must be finite")
    return arr


def region_utility(x: PopulationState, b: int, params: GameParams,
                   q: float) -> float:
    """Reward share by data contribution minus the capacity cost.

    u_b = R_b * (x_b M_b / sum_c x_c M_c) - unit_cost * q
    """
    if not 0 <= b < params.n_regions:
        raise IndexError("region index out of range")
    if len(x) != params.n_regions:
        raise ValueError("state length must match the number of regions")
    weights = np.asarray(params.data_volume)
    denom = float(np.dot(x.x, weights))
    if denom <= 0.0:
        raise ValueError("weighted population mass must be positive")
    share = x.x[b] * params.data_volume[b] / denom
    return params.rewards[b] * share - params.unit_cost * float(q)


def average_utility(x: PopulationState, params: GameParams,
                    q: Union[float, Sequence[float]]) -> float:
    """Population-average utility sum_b u_b(x) * x_b."""
    qv = _q_vector(q, params.n_regions)
    total = 0.0
    for b in range(params.n_regions):
        total += region_utility(x, b, params, qv[b]) * float(x.x[b])
    return total


def replicator_rhs(x: PopulationState, params: GameParams,
                   q: Union[float, Sequence[float]]) -> np.ndarray:
    """Growth rate of each region share: lr * x_b * (u_b - average utility).

    Evaluated in the pairwise form lr * x_b * sum_c x_c (u_b - u_c), which is
    identical on the simplex and returns exact zeros at vertices and at
    equal-utility states. Components sum to zero (tangency to the simplex).
    """
    qv = _q_vector(q, len(x))
    if params.n_regions != len(x):
        raise ValueError("state length must match the number of regions")
    return _backend.replicator_rhs(
        x.x, np.asarray(params.rewards), np.asarray(params.data_volume),
        params.unit_cost, params.learning_rate, qv)


def integrate(x0: PopulationState, params: GameParams,
              q: Union[float, Sequence[float]], dt: float,
              n_steps: int) -> Trajectory:
    """Explicit Euler with per-step clamp to [0,1] and renormalization.

    Every recorded state satisfies the simplex invariant; the run is
    deterministic. A step that produces a non-finite state raises with the
    offending step index.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError("dt must be positive and finite")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    qv = _q_vector(q, len(x0))
    if params.n_regions != len(x0):
        raise ValueError("state length must match the number of regions")
    states, derivs = _backend.replicator_path(
        x0.x, np.asarray(params.rewards), np.asarray(params.data_volume),
        params.unit_cost, params.learning_rate, qv, dt, n_steps)
    times = np.arange(n_steps + 1, dtype=np.float64) * dt
    return Trajectory(times=times, states=states, derivatives=derivs)


def detect_equilibrium(traj: Trajectory, tol: float) -> Optional[EquilibriumReport]:
    """Earliest sample from which ||dx||_inf < tol holds for the rest of the run."""
    if not (tol > 0):
        raise ValueError("tol must be positive")
    norms = np.max(np.abs(traj.derivatives), axis=1)
    below = norms < tol
    if not below[-1]:
        return None
    # walk back over the trailing run of below-tolerance samples
    idx = len(below) - 1
    while idx > 0 and below[idx - 1]:
        idx -= 1
    return EquilibriumReport(time=float(traj.times[idx]), index=idx,
                             state=traj.final_state())


def lyapunov_value(x: PopulationState) -> float:
    """Quadratic potential sum_b x_b^2 used in the stability argument."""
    return float(np.dot(x.x, x.x))


def lyapunov_derivative(x: PopulationState, params: GameParams,
                        q: Union[float, Sequence[float]]) -> float:
    """Time derivative of the potential along the flow: 2 * sum_b x_b * dx_b."""
    dx = replicator_rhs(x, params, q)
    return 2.0 * float(np.dot(x.x, dx))


def _field_literal(x: np.ndarray, params: GameParams, qv: np.ndarray) -> np.ndarray:
    # Literal form lr * x_b * (u_b - sum_c u_c x_c); valid slightly off the
    # simplex, which the finite-difference probe requires.
    weights = np.asarray(params.data_volume)
    denom = float(np.dot(x, weights))
    if denom <= 0.0:
        raise ValueError("weighted population mass must be positive")
    u = np.asarray(params.rewards) * (x * weights / denom) - params.unit_cost * qv
    ubar = float(np.dot(u, x))
    return params.learning_rate * x * (u - ubar)


def lipschitz_probe(params: GameParams, q: Union[float, Sequence[float]],
                    n_samples: int, rng: np.random.Generator,
                    eps: float = 1e-6) -> float:
    """Estimate the largest |d(dx_b)/d(x_bhat)| over interior simplex points.

    Central finite differences of the literal vector field at sampled
    interior points; the returned bound is finite whenever the parameters
    are, scales linearly with the learning rate, and feeds the uniqueness
    check for the dynamics.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    n = params.n_regions
    qv = _q_vector(q, n)
    worst = 0.0
    for _ in range(n_samples):
        w = rng.dirichlet(np.ones(n))
        x = 0.6 * w + 0.4 / n  # keep clear of the boundary
        for bhat in range(n):
            xp = x.copy()
            xm = x.copy()
            xp[bhat] += eps
            xm[bhat] -= eps
            fd = (_field_literal(xp, params, qv) - _field_literal(xm, params, qv)) / (2 * eps)
            m = float(np.max(np.abs(fd)))
            if m > worst:
                worst = m
    if not math.isfinite(worst):
        raise ArithmeticError("derivative estimate is not finite")
    return worst
