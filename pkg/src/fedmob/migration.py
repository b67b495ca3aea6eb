"""Online cross-region reassignment of interrupted training tasks.

Interrupted tasks wait in a FIFO queue and are matched to receiver users by
a two-objective genetic algorithm (binary tournament by dominance, simulated
binary crossover, polynomial mutation, fast non-dominated sorting, elitist
environmental selection). A genome is a vector in [0,1]^T; each gene decodes
to a candidate receiver, falling through to the next receiver in capacity
order when the candidate lacks headroom. Objectives are communication
overhead (transmission time of assigned tasks plus a penalty per unassigned
task) and fairness loss (variance of per-receiver load), both minimized.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from fedmob import _backend

Objectives = Tuple[float, float]


@dataclass(frozen=True)
class Task:
    """An interrupted training task awaiting a new host."""

    id: str
    origin_user: int
    required_capacity: float
    data_size: float
    progress: float = 0.0

    def __post_init__(self):
        if not (self.required_capacity > 0):
            raise ValueError("required_capacity must be positive")
        if not (self.data_size > 0):
            raise ValueError("data_size must be positive")
        if not (0.0 <= self.progress < 1.0):
            raise ValueError("progress must be in [0, 1)")


class OnlineQueue:
    """FIFO queue of interrupted tasks; task ids are unique."""

    def __init__(self, tasks: Iterable[Task] = ()):
        self._tasks: List[Task] = []
        self._ids: set = set()
        for t in tasks:
            self.push(t)

    def push(self, task: Task) -> None:
        if task.id in self._ids:
            raise ValueError(f"duplicate task id {task.id!r}")
        self._tasks.append(task)
        self._ids.add(task.id)

    def remove(self, task_id: str) -> Task:
        for i, t in enumerate(self._tasks):
            if t.id == task_id:
                self._ids.discard(task_id)
                return self._tasks.pop(i)
        raise KeyError(task_id)

    @property
    def tasks(self) -> Tuple[Task, ...]:
        return tuple(self._tasks)

    def __len__(self) -> int:
        return len(self._tasks)

    def __iter__(self):
        return iter(self._tasks)


@dataclass(frozen=True)
class Receiver:
    """Candidate host with its available uplink capacity."""

    id: int
    capacity: float

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")


@dataclass
class Individual:
    """Real-coded GA member: genome in [0,1]^T plus evaluation metadata."""

    genome: np.ndarray
    objectives: Optional[Objectives] = None
    rank: Optional[int] = None
    crowding: float = 0.0

    def __post_init__(self):
        self.genome = np.asarray(self.genome, dtype=np.float64)
        if self.genome.ndim != 1:
            raise ValueError("genome must be 1-D")
        if self.genome.size and (self.genome.min() < 0.0 or self.genome.max() > 1.0):
            raise ValueError("genome components must lie in [0, 1]")


@dataclass(frozen=True)
class AssignmentPlan:
    """Materialized task-to-receiver mapping with its objective vector."""

    mapping: Dict[str, Optional[int]]
    objectives: Objectives

    @property
    def assigned(self) -> int:
        return sum(1 for v in self.mapping.values() if v is not None)

    @property
    def unassigned(self) -> int:
        return sum(1 for v in self.mapping.values() if v is None)


@dataclass(frozen=True)
class GAParams:
    """Search parameters; defaults follow common NSGA-II practice."""

    pop_size: int = 50
    t_max: int = 100
    eta_c: float = 15.0
    eta_m: float = 20.0
    p_c: float = 0.9
    p_m: Optional[float] = None  # None -> 1/T at run time
    whole_front_only: bool = False  # admit only whole fronts (no truncation)

    def __post_init__(self):
        if self.pop_size < 2:
            raise ValueError("pop_size must be >= 2")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not (self.eta_c > 0 and self.eta_m > 0):
            raise ValueError("distribution indices must be positive")
        if not (0.0 <= self.p_c <= 1.0):
            raise ValueError("p_c must be in [0, 1]")
        if self.p_m is not None and not (0.0 <= self.p_m <= 1.0):
            raise ValueError("p_m must be in [0, 1]")


@dataclass(frozen=True)
class GenerationStats:
    gen: int
    best_f1: float
    best_f2: float
    front1_size: int
    assigned: int
    unassigned: int
    # knee-point objectives of the generation's first front (not exported)
    elite: Objectives = (0.0, 0.0)


@dataclass(frozen=True)
class MigrationResult:
    plan: AssignmentPlan
    population: List[Individual]
    history: List[GenerationStats]


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff a <= b componentwise with strict improvement somewhere."""
    if len(a) != len(b):
        raise ValueError("objective vectors must have equal dimension")
    strict = False
    for ai, bi in zip(a, b):
        if ai > bi:
            return False
        if ai < bi:
            strict = True
    return strict


def fast_nondominated_sort(pop: Sequence[Individual]) -> List[List[int]]:
    """Pareto fronts of the population as ordered lists of indices."""
    for ind in pop:
        if ind.objectives is None:
            raise ValueError("population contains unevaluated individuals")
    if not pop:
        return []
    objs = np.asarray([ind.objectives for ind in pop], dtype=np.float64)
    return _backend.nondominated_fronts(objs)


def crowding_distance(objs: np.ndarray, front: Sequence[int]) -> np.ndarray:
    """Crowding distance of each front member (same order as ``front``)."""
    k = len(front)
    dist = np.zeros(k)
    if k <= 2:
        dist[:] = np.inf
        return dist
    vals = np.asarray(objs, dtype=np.float64)[list(front)]
    for m in range(vals.shape[1]):
        order = np.argsort(vals[:, m], kind="stable")
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        span = vals[order[-1], m] - vals[order[0], m]
        if span == 0.0:
            continue
        for i in range(1, k - 1):
            if not np.isinf(dist[order[i]]):
                dist[order[i]] += (vals[order[i + 1], m] - vals[order[i - 1], m]) / span
    return dist


def _annotate(pop: List[Individual]) -> List[List[int]]:
    """Assign rank and crowding distance in place; returns the fronts."""
    fronts = fast_nondominated_sort(pop)
    objs = np.asarray([ind.objectives for ind in pop], dtype=np.float64)
    for h, front in enumerate(fronts):
        dist = crowding_distance(objs, front)
        for j, idx in enumerate(front):
            pop[idx].rank = h + 1
            pop[idx].crowding = float(dist[j])
    return fronts


def binary_tournament(pop: Sequence[Individual],
                      rng: np.random.Generator) -> List[Individual]:
    """Mating pool of len(pop) dominance-tournament winners.

    Per slot, two distinct contestants are drawn: one integers(n) draw for
    the first index, one integers(n-1) draw shifted past it for the second.
    The dominance winner advances; otherwise ties fall to lower rank, then
    higher crowding, then the second draw.
    """
    n = len(pop)
    if n < 2:
        raise ValueError("population must have at least 2 members")
    pool: List[Individual] = []
    for _ in range(n):
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        a, b = pop[i], pop[j]
        if a.objectives is None or b.objectives is None:
            raise ValueError("population contains unevaluated individuals")
        if dominates(a.objectives, b.objectives):
            pool.append(a)
        elif dominates(b.objectives, a.objectives):
            pool.append(b)
        elif (a.rank is not None and b.rank is not None) and a.rank != b.rank:
            pool.append(a if a.rank < b.rank else b)
        elif a.crowding != b.crowding:
            pool.append(a if a.crowding > b.crowding else b)
        else:
            pool.append(b)
    return pool


def _sbx_raw(p1: np.ndarray, p2: np.ndarray, eta_c: float, p_c: float,
             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Unclamped SBX children; per gene, c1 + c2 = p1 + p2 up to rounding."""
    t = p1.size
    gate = rng.random(t)
    u = rng.random(t)
    exponent = 1.0 / (eta_c + 1.0)
    beta = np.where(u <= 0.5, (2.0 * u) ** exponent,
                    (1.0 / (2.0 * (1.0 - u))) ** exponent)
    cross = gate <= p_c if p_c > 0.0 else np.zeros(t, dtype=bool)
    c1 = np.where(cross, 0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2), p1)
    c2 = np.where(cross, 0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2), p2)
    return c1, c2


def sbx(parent1: np.ndarray, parent2: np.ndarray, eta_c: float, p_c: float,
        rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Simulated binary crossover on [0,1] genomes.

    Each gene pair is crossed with probability p_c using the polynomial
    spread factor indexed by eta_c, else copied through; children are
    clamped back to [0,1]. Two uniform vectors are consumed per call
    (crossover gates, then spread draws) regardless of outcomes.
    """
    p1 = np.asarray(parent1, dtype=np.float64)
    p2 = np.asarray(parent2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ValueError("parents must have equal genome length")
    c1, c2 = _sbx_raw(p1, p2, eta_c, p_c, rng)
    return np.clip(c1, 0.0, 1.0), np.clip(c2, 0.0, 1.0)


def polynomial_mutation(genome: np.ndarray, eta_m: float, p_m: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Bounded polynomial mutation on [0,1] genes.

    Each gene mutates independently with probability p_m; the perturbation
    distribution is boundary-aware, so outputs always stay inside [0,1]
    (a gene at 0 can only move up, a gene at 1 only down). Two uniform
    vectors are consumed per call.
    """
    y = np.asarray(genome, dtype=np.float64)
    t = y.size
    gate = rng.random(t) < p_m
    r = rng.random(t)
    exponent = 1.0 / (eta_m + 1.0)
    low = r < 0.5
    # bounds are [0, 1]: delta_1 = y, delta_2 = 1 - y
    dq_low = (2.0 * r + (1.0 - 2.0 * r) * (1.0 - y) ** (eta_m + 1.0)) ** exponent - 1.0
    dq_high = 1.0 - (2.0 * (1.0 - r) + 2.0 * (r - 0.5) * y ** (eta_m + 1.0)) ** exponent
    delta = np.where(low, dq_low, dq_high)
    out = np.where(gate, y + delta, y)
    return np.clip(out, 0.0, 1.0)


def environmental_selection(parents: Sequence[Individual],
                            offspring: Sequence[Individual], n: int,
                            whole_front_only: bool = False) -> List[Individual]:
    """Elitist survivor selection over parents + offspring.

    Whole fronts are admitted while they fit; the first overflowing front is
    truncated by descending crowding distance so exactly n survive. With
    ``whole_front_only`` the truncation is skipped and only fronts that fit
    entirely are admitted (may return fewer than n).
    """
    if n < 1:
        raise ValueError("target size must be >= 1")
    merged = list(parents) + list(offspring)
    if len(merged) < n:
        raise ValueError(f"cannot select {n} from {len(merged)} individuals")
    fronts = fast_nondominated_sort(merged)
    objs = np.asarray([ind.objectives for ind in merged], dtype=np.float64)
    selected: List[Individual] = []
    for h, front in enumerate(fronts):
        dist = crowding_distance(objs, front)
        for j, idx in enumerate(front):
            merged[idx].rank = h + 1
            merged[idx].crowding = float(dist[j])
        room = n - len(selected)
        if room <= 0:
            break
        if len(front) <= room:
            selected.extend(merged[idx] for idx in front)
        elif not whole_front_only:
            order = sorted(range(len(front)), key=lambda j: (-dist[j], j))
            selected.extend(merged[front[j]] for j in order[:room])
            break
    return selected


def unassignment_penalty(queue: OnlineQueue) -> float:
    """Overhead charged per unassigned task.

    Ten times the worst transmission time any queued task would need at its
    own minimum acceptable capacity; keeps objectives finite and dominated
    by assignment quality.
    """
    if len(queue) == 0:
        return 0.0
    return 10.0 * max(t.data_size / t.required_capacity for t in queue)


def _roster_order(receivers: Sequence[Receiver]) -> List[Receiver]:
    return sorted(receivers, key=lambda r: (-r.capacity, r.id))


def decode_plan(genome: np.ndarray, queue: OnlineQueue,
                receivers: Sequence[Receiver]) -> AssignmentPlan:
    """Greedy decode of a genome into a capacity-feasible plan.

    Receivers are ranked by descending capacity (ties by id). Each gene
    picks a starting rank; the task goes to the first receiver from there
    (wrapping once around the roster) whose remaining headroom covers the
    task's required capacity. Tasks finding no host stay unassigned.
    """
    if not receivers:
        raise ValueError("receiver roster must be non-empty")
    roster = _roster_order(receivers)
    n = len(roster)
    remaining = [r.capacity for r in roster]
    loads = [0.0] * n
    mapping: Dict[str, Optional[int]] = {}
    overhead = 0.0
    penalty = unassignment_penalty(queue)
    genome = np.asarray(genome, dtype=np.float64)
    if genome.size != len(queue):
        raise ValueError("genome length must equal the queue length")
    for gene, task in zip(genome, queue):
        start = min(int(gene * n), n - 1)
        chosen = None
        for off in range(n):
            k = (start + off) % n
            if remaining[k] >= task.required_capacity:
                chosen = k
                break
        if chosen is None:
            mapping[task.id] = None
            overhead += penalty
        else:
            remaining[chosen] -= task.required_capacity
            loads[chosen] += task.data_size
            mapping[task.id] = roster[chosen].id
            overhead += task.data_size / roster[chosen].capacity
    fairness = float(np.var(loads)) if n else 0.0
    return AssignmentPlan(mapping=mapping, objectives=(overhead, fairness))


def evaluate_objectives(individual: Individual, queue: OnlineQueue,
                        receivers: Sequence[Receiver]) -> Objectives:
    """(communication overhead, fairness loss) of the decoded plan."""
    return decode_plan(individual.genome, queue, receivers).objectives


def evaluate_population(pop: Sequence[Individual], queue: OnlineQueue,
                        receivers: Sequence[Receiver],
                        eval_map: Optional[Callable] = None) -> None:
    """Evaluate all individuals in place.

    ``eval_map`` may be a parallel map (e.g. ``Executor.map``); results are
    committed in population-index order, so concurrent and sequential
    evaluation produce identical populations.
    """
    mapper = map if eval_map is None else eval_map
    results = list(mapper(lambda ind: evaluate_objectives(ind, queue, receivers), pop))
    for ind, obj in zip(pop, results):
        ind.objectives = (float(obj[0]), float(obj[1]))


def knee_index(objectives: Sequence[Objectives]) -> int:
    """Index minimizing the normalized objective sum; ties go to lower f1."""
    arr = np.asarray(objectives, dtype=np.float64)
    lo = arr.min(axis=0)
    span = arr.max(axis=0) - lo
    span[span == 0.0] = 1.0
    norm = (arr - lo) / span
    scores = norm.sum(axis=1)
    best = 0
    for i in range(1, len(arr)):
        if (scores[i] < scores[best] - 1e-12
                or (abs(scores[i] - scores[best]) <= 1e-12 and arr[i, 0] < arr[best, 0])):
            best = i
    return best


def assign_tasks(front: Sequence[Individual], queue: OnlineQueue,
                 receivers: Sequence[Receiver]) -> AssignmentPlan:
    """Materialize the knee-point member of the best front into a plan."""
    if not front:
        raise ValueError("front must be non-empty")
    for ind in front:
        if ind.objectives is None:
            raise ValueError("front contains unevaluated individuals")
    best = knee_index([ind.objectives for ind in front])
    return decode_plan(front[best].genome, queue, receivers)


def run_migration(queue: OnlineQueue, receivers: Sequence[Receiver],
                  params: GAParams, rng: Union[int, np.random.Generator],
                  eval_map: Optional[Callable] = None) -> MigrationResult:
    """Full reassignment search; deterministic for a given seed.

    Per generation: binary tournament into a mating pool, SBX on consecutive
    pool pairs, polynomial mutation, offspring evaluation, then elitist
    selection over parents plus offspring. The returned plan is the knee
    point of the final first front.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    t = len(queue)
    p_m = params.p_m if params.p_m is not None else (1.0 / t if t else 0.0)
    n = params.pop_size

    pop = [Individual(genome=rng.random(t)) for _ in range(n)]
    evaluate_population(pop, queue, receivers, eval_map)
    _annotate(pop)

    history: List[GenerationStats] = []
    for gen in range(1, params.t_max + 1):
        pool = binary_tournament(pop, rng)
        offspring: List[Individual] = []
        for i in range(0, len(pool) - 1, 2):
            c1, c2 = sbx(pool[i].genome, pool[i + 1].genome, params.eta_c, params.p_c, rng)
            offspring.append(Individual(polynomial_mutation(c1, params.eta_m, p_m, rng)))
            offspring.append(Individual(polynomial_mutation(c2, params.eta_m, p_m, rng)))
        if len(pool) % 2:
            lone = polynomial_mutation(pool[-1].genome.copy(), params.eta_m, p_m, rng)
            offspring.append(Individual(lone))
        evaluate_population(offspring, queue, receivers, eval_map)
        pop = environmental_selection(pop, offspring, n, params.whole_front_only)
        fronts = _annotate(pop)
        front1 = [pop[i] for i in fronts[0]]
        plan = assign_tasks(front1, queue, receivers) if t else AssignmentPlan({}, (0.0, 0.0))
        history.append(GenerationStats(
            gen=gen,
            best_f1=min(ind.objectives[0] for ind in front1),
            best_f2=min(ind.objectives[1] for ind in front1),
            front1_size=len(front1),
            assigned=plan.assigned,
            unassigned=plan.unassigned,
            elite=plan.objectives,
        ))

    fronts = _annotate(pop)
    front1 = [pop[i] for i in fronts[0]]
    if t:
        plan = assign_tasks(front1, queue, receivers)
    else:
        plan = AssignmentPlan({}, (0.0, 0.0))
    return MigrationResult(plan=plan, population=pop, history=history)


def random_search(queue: OnlineQueue, receivers: Sequence[Receiver],
                  n_evals: int, rng: Union[int, np.random.Generator]) -> MigrationResult:
    """Uniform-sampling baseline with the same evaluation budget as the GA."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if n_evals < 1:
        raise ValueError("n_evals must be >= 1")
    t = len(queue)
    best: Optional[Individual] = None
    best_plan: Optional[AssignmentPlan] = None
    history: List[GenerationStats] = []
    for i in range(n_evals):
        ind = Individual(genome=rng.random(t))
        plan = decode_plan(ind.genome, queue, receivers)
        ind.objectives = plan.objectives
        if best is None or ind.objectives[0] < best.objectives[0]:
            best, best_plan = ind, plan
        history.append(GenerationStats(
            gen=i + 1, best_f1=best.objectives[0], best_f2=best.objectives[1],
            front1_size=1, assigned=best_plan.assigned,
            unassigned=best_plan.unassigned, elite=best_plan.objectives))
    return MigrationResult(plan=best_plan, population=[best], history=history)


def write_generation_log(history: Sequence[GenerationStats],
                         f: Union[str, IO[str]]) -> None:
    """CSV columns: gen, best_f1, best_f2, front1_size, assigned, unassigned."""
    own = isinstance(f, str)
    fh = open(f, "w", newline="") if own else f
    try:
        writer = csv.writer(fh)
        writer.writerow(["gen", "best_f1", "best_f2", "front1_size",
                         "assigned", "unassigned"])
        for row in history:
            writer.writerow([row.gen, repr(row.best_f1), repr(row.best_f2),
                             row.front1_size, row.assigned, row.unassigned])
    finally:
        if own:
            fh.close()
