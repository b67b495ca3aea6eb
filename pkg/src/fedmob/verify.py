"""Self-contained verification suites and independent oracles.

The checks here re-derive expected behaviour through routes independent of
the implementations they exercise (pairwise matrix peeling instead of Deb's
counting sort, exhaustive subset search instead of the greedy auction, hand
expansions of the dynamics) and are shared by the ``fedmob verify`` CLI and
the acceptance tests.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fedmob import evogame, migration
from fedmob.auction import (AuctionConfig, Bid, _capacity_of, feasible,
                            greedy_select, run_auction, verify_ic, verify_ir)
from fedmob.channel import ChannelParams, ChannelState, capacity
from fedmob.evogame import GameParams, PopulationState


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ok", bool(self.ok))


# --- independent oracles ---------------------------------------------------

def brute_force_fronts(objs: np.ndarray) -> List[List[int]]:
    """Pareto fronts by repeated matrix peeling (not Deb's counting scheme)."""
    objs = np.asarray(objs, dtype=np.float64)
    n = objs.shape[0]
    le = np.all(objs[:, None, :] <= objs[None, :, :], axis=2)
    lt = np.any(objs[:, None, :] < objs[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    alive = np.ones(n, dtype=bool)
    fronts: List[List[int]] = []
    while alive.any():
        dominated = (dom & alive[:, None]).any(axis=0)
        front = np.where(alive & ~dominated)[0]
        fronts.append([int(i) for i in front])
        alive[front] = False
    return fronts


def exhaustive_auction_optimum(bids: Sequence[Bid], cfg: AuctionConfig,
                               capacities=None) -> float:
    """Cheapest total price over all K-subsets of feasible base stations."""
    pool = [b for b in bids if feasible(b, cfg, _capacity_of(b, capacities))]
    best_by_bs: Dict = {}
    for b in pool:
        cur = best_by_bs.get(b.bs_id)
        if cur is None or b.price < cur.price:
            best_by_bs[b.bs_id] = b
    stations = sorted(best_by_bs, key=str)
    if len(stations) < cfg.k_min:
        raise ValueError("instance has too few feasible base stations")
    best = math.inf
    for combo in itertools.combinations(stations, cfg.k_min):
        total = sum(best_by_bs[s].price for s in combo)
        if total < best:
            best = total
    return best


def random_auction_instance(rng: np.random.Generator,
                            n_range: Tuple[int, int] = (3, 10),
                            k_range: Tuple[int, int] = (1, 3)):
    """Random feasible truthful instance with at least one losing station.

    Accuracies sit in [0.65, 0.95), so quality ratios stay within 0.95/0.65
    of each other and the iteration budget t_g=25 admits every bid.
    """
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    k = min(k, n - 1)  # keep a loser so the critical bid exists
    bids = []
    for i in range(n):
        price = float(rng.uniform(1.0, 10.0))
        accur = float(rng.uniform(0.65, 0.95))
        bids.append(Bid(bs_id=i, schedule_id=0, price=price, accuracy=accur,
                        quality=accur, t_cmp=1.0, t_max=1.0, true_cost=price))
    return bids, AuctionConfig(k_min=k, t_g=25, eta=1.0)


def default_game(n_regions: int = 3) -> Tuple[GameParams, np.ndarray]:
    params = GameParams(rewards=tuple(np.linspace(600.0, 900.0, n_regions)),
                        data_volume=(100.0,) * n_regions,
                        unit_cost=1.0, learning_rate=0.001)
    q = np.linspace(2.0, 4.0, n_regions)
    return params, q


def random_simplex(rng: np.random.Generator, n: int) -> PopulationState:
    return PopulationState(rng.dirichlet(np.ones(n)))


# --- check suites ----------------------------------------------------------

def check_capacity_anchors() -> CheckResult:
    params = ChannelParams(beta_mean=1.0, p_max=1.0, sigma_w2=1.0)
    anchors = [(0.0, 0.0), (1.0, 1.0), (3.0, 2.0)]
    for snr, expect in anchors:
        got = capacity(ChannelState(beta=1.0, h_mag2=snr, power=1.0), params)
        if got != expect:
            return CheckResult("capacity-anchors", False,
                               f"SNR={snr}: got {got}, want {expect}")
    return CheckResult("capacity-anchors", True, "SNR 0/1/3 -> Q 0/1/2 exact")


def check_capacity_monotone(n: int = 10_000, seed: int = 11) -> CheckResult:
    rng = np.random.default_rng(seed)
    params = ChannelParams(beta_mean=1.0, p_max=10.0, sigma_w2=0.5)
    for _ in range(n):
        p, b, h = rng.uniform(0.0, 10.0, 3)
        base = capacity(ChannelState(beta=b, h_mag2=h, power=p), params)
        bump = rng.uniform(0.01, 1.0)
        for state in (ChannelState(beta=b, h_mag2=h, power=p + bump),
                      ChannelState(beta=b + bump, h_mag2=h, power=p),
                      ChannelState(beta=b, h_mag2=h + bump, power=p)):
            if capacity(state, params) < base:
                return CheckResult("capacity-monotone", False,
                                   f"decrease at p={p}, beta={b}, h={h}")
    return CheckResult("capacity-monotone", True, f"{n} random triples")


def check_replicator_tangency(n_states: int = 10_000, tol: float = 1e-12,
                              seed: int = 12) -> CheckResult:
    rng = np.random.default_rng(seed)
    params, q = default_game(3)
    worst = 0.0
    for _ in range(n_states):
        x = random_simplex(rng, 3)
        s = abs(float(evogame.replicator_rhs(x, params, q).sum()))
        worst = max(worst, s)
    ok = worst < tol
    return CheckResult("replicator-tangency", ok, f"worst |sum dx| = {worst:.3e}")


def check_fixed_points(seed: int = 13) -> CheckResult:
    params, q = default_game(3)
    for b in range(3):
        vertex = np.zeros(3)
        vertex[b] = 1.0
        dx = evogame.replicator_rhs(PopulationState(vertex), params, q)
        if np.any(dx != 0.0):
            return CheckResult("replicator-fixed-points", False, f"vertex {b} moves")
    # equal utilities: rewards scaled so reward * share is constant
    eq_params = GameParams(rewards=(1.0, 2.0, 2.0), data_volume=(100.0,) * 3,
                           unit_cost=0.0, learning_rate=0.5)
    x = PopulationState((0.5, 0.25, 0.25))
    dx = evogame.replicator_rhs(x, eq_params, np.zeros(3))
    if np.any(dx != 0.0):
        return CheckResult("replicator-fixed-points", False, "equal-utility state moves")
    return CheckResult("replicator-fixed-points", True, "vertices and equal utilities exact")


def check_two_region_form(n_instances: int = 1_000, tol: float = 1e-12,
                          seed: int = 14) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        params = GameParams(rewards=tuple(rng.uniform(600, 900, 2)),
                            data_volume=tuple(rng.uniform(50, 150, 2)),
                            unit_cost=float(rng.uniform(0, 2)),
                            learning_rate=float(rng.uniform(0.1, 1.0)))
        q = rng.uniform(0, 5, 2)
        x1 = float(rng.uniform(0.01, 0.99))
        x = PopulationState((x1, 1.0 - x1))
        u1 = evogame.region_utility(x, 0, params, q[0])
        u2 = evogame.region_utility(x, 1, params, q[1])
        expect = params.learning_rate * x.x[0] * x.x[1] * (u1 - u2)
        got = float(evogame.replicator_rhs(x, params, q)[0])
        worst = max(worst, abs(got - expect))
    ok = worst < tol
    return CheckResult("replicator-two-region-form", ok, f"worst dev = {worst:.3e}")


def check_sort_oracle(n_pops: int = 500, max_size: int = 100,
                      seed: int = 15) -> CheckResult:
    rng = np.random.default_rng(seed)
    for i in range(n_pops):
        n = int(rng.integers(1, max_size + 1))
        objs = rng.uniform(0, 1, (n, 2))
        if rng.random() < 0.3:  # ties exercise the equal-vector path
            objs = np.round(objs, 1)
        pop = [migration.Individual(genome=np.zeros(1), objectives=tuple(row))
               for row in objs]
        got = migration.fast_nondominated_sort(pop)
        want = brute_force_fronts(objs)
        if [sorted(f) for f in got] != [sorted(f) for f in want]:
            return CheckResult("sort-oracle", False, f"mismatch on population {i}")
    return CheckResult("sort-oracle", True, f"{n_pops} populations vs matrix peeling")


def check_sbx_mean(n_draws: int = 10_000, tol: float = 1e-12,
                   seed: int = 16) -> CheckResult:
    rng = np.random.default_rng(seed)
    p1 = rng.uniform(0, 1, n_draws)
    p2 = rng.uniform(0, 1, n_draws)
    c1, c2 = migration._sbx_raw(p1, p2, eta_c=15.0, p_c=1.0, rng=rng)
    worst = float(np.max(np.abs((c1 + c2) - (p1 + p2))))
    return CheckResult("sbx-mean-preservation", worst < tol,
                       f"worst |(c1+c2)-(p1+p2)| = {worst:.3e}")


def check_pm_bounds(n_draws: int = 10_000, seed: int = 17) -> CheckResult:
    rng = np.random.default_rng(seed)
    genome = rng.uniform(0, 1, n_draws)
    out = migration.polynomial_mutation(genome, eta_m=20.0, p_m=1.0, rng=rng)
    ok = bool(np.all(out >= 0.0) and np.all(out <= 1.0))
    return CheckResult("pm-bounds", ok, f"{n_draws} genes stay in [0,1]")


def check_identity_pipeline(seed: int = 18) -> CheckResult:
    rng = np.random.default_rng(seed)
    p1, p2 = rng.uniform(0, 1, 20), rng.uniform(0, 1, 20)
    c1, c2 = migration.sbx(p1, p2, eta_c=15.0, p_c=0.0, rng=rng)
    m = migration.polynomial_mutation(c1, eta_m=20.0, p_m=0.0, rng=rng)
    ok = np.array_equal(c1, p1) and np.array_equal(c2, p2) and np.array_equal(m, p1)
    return CheckResult("identity-pipeline", ok, "p_c = p_m = 0 copies through")


def check_auction_properties(n_instances: int = 200, grid_points: int = 50,
                             seed: int = 19, ic_tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_gain = 0.0
    for i in range(n_instances):
        bids, cfg = random_auction_instance(rng)
        outcome = run_auction(bids, cfg)
        stations = [bs for bs, _ in outcome.winners]
        if len(outcome.winners) < cfg.k_min or len(set(stations)) != len(stations):
            return CheckResult("auction-ir-ic", False, f"coverage broken on {i}")
        by_bs = {b.bs_id: b for b in bids}
        for bs, _ in outcome.winners:
            if outcome.payments[bs] < by_bs[bs].price:
                return CheckResult("auction-ir-ic", False,
                                   f"payment below price on {i}")
        if not verify_ir(outcome, bids).ok:
            return CheckResult("auction-ir-ic", False, f"IR violated on {i}")
        report = verify_ic(bids, cfg, grid_points=grid_points)
        worst_gain = max(worst_gain, report.max_gain)
        if report.max_gain > ic_tol:
            return CheckResult("auction-ir-ic", False,
                               f"IC gain {report.max_gain:.3e} on {i}")
    return CheckResult("auction-ir-ic", True,
                       f"{n_instances} instances, worst IC gain {worst_gain:.3e}")


def check_greedy_gap(n_instances: int = 200, seed: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    exact = 0
    gaps = []
    for i in range(n_instances):
        bids, cfg = random_auction_instance(rng)
        winners = greedy_select(bids, cfg)
        total = sum(w.price for w in winners)
        best = exhaustive_auction_optimum(bids, cfg)
        gap = total / best
        gaps.append(gap)
        if total == best:
            exact += 1
        if gap > 1.5:
            return CheckResult("greedy-gap", False, f"gap {gap:.3f} on {i}")
    return CheckResult(
        "greedy-gap", True,
        f"exact {exact}/{n_instances}, mean gap {float(np.mean(gaps)):.4f}, "
        f"max gap {float(np.max(gaps)):.4f}")


def run_all(quick: bool = False) -> List[CheckResult]:
    """Every suite at spec scale, or a reduced-size smoke pass."""
    scale = 0.1 if quick else 1.0

    def s(n: int) -> int:
        return max(int(n * scale), 10)

    return [
        check_capacity_anchors(),
        check_capacity_monotone(n=s(10_000)),
        check_replicator_tangency(n_states=s(10_000)),
        check_fixed_points(),
        check_two_region_form(n_instances=s(1_000)),
        check_sort_oracle(n_pops=s(500)),
        check_sbx_mean(n_draws=s(10_000)),
        check_pm_bounds(n_draws=s(10_000)),
        check_identity_pipeline(),
        check_auction_properties(n_instances=s(200)),
        check_greedy_gap(n_instances=s(200)),
    ]
