"""Round orchestrator for the four-stage training loop.

Each round: (1) region formation — one replicator-dynamics window updates
the strategy proportions and every user re-homes by sampling them; (2)
mobility — users whose net utility is negative, or who move exogenously,
interrupt their task into the region's online queue, and the migration GA
reassigns queued tasks to receivers with capacity headroom; (3) a synthetic
accuracy model feeds per-region bids into the procurement auction; (4)
auction payments are distributed to the winning regions' users in proportion
to data contribution, with interrupted users receiving a discounted share.

Everything is driven by integer-keyed random streams derived from the
config seed, so a full run is bit-reproducible.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from fedmob import channel as channel_mod
from fedmob import evogame
from fedmob.auction import (AuctionConfig, AuctionInfeasibleError, AuctionOutcome, Bid,
                            run_auction)
from fedmob.channel import ChannelParams, ChannelState
from fedmob.evogame import GameParams, PopulationState
from fedmob.migration import GAParams, OnlineQueue, Receiver, Task, run_migration

# stream tags for the integer-keyed generators
_TAG_INIT = 0
_TAG_STRATEGY = 1
_TAG_TRIGGER = 2
_TAG_BIDS = 3
_TAG_CHANNEL = 4
_TAG_GA_BASE = 100


@dataclass(frozen=True)
class EvoGameBlock:
    """Strategy-evolution settings for stage 1."""

    unit_cost: float = 1.0
    learning_rate: float = 0.001
    dt: float = 0.01
    window: float = 2.0
    equilibrium_tol: float = 1e-4
    cost_form: str = "capacity"  # or "time": cost charged per unit time instead
    x0: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.unit_cost < 0:
            raise ValueError("unit_cost must be non-negative")
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if not (self.dt > 0 and self.window > 0):
            raise ValueError("dt and window must be positive")
        if self.cost_form not in ("capacity", "time"):
            raise ValueError(f"unknown cost form {self.cost_form!r}")


@dataclass(frozen=True)
class MigrationBlock:
    """GA budget used for in-round reassignment (kept modest per round)."""

    pop_size: int = 20
    t_max: int = 15
    eta_c: float = 15.0
    eta_m: float = 20.0
    p_c: float = 0.9
    p_m: Optional[float] = None

    def ga_params(self) -> GAParams:
        return GAParams(pop_size=self.pop_size, t_max=self.t_max, eta_c=self.eta_c,
                        eta_m=self.eta_m, p_c=self.p_c, p_m=self.p_m)


@dataclass(frozen=True)
class AuctionBlock:
    """Auction knobs plus the bid construction model.

    A region's claimed cost is proportional to its communication overhead
    (cost_coeff) with a small multiplicative markup on top of the true cost.
    """

    k_min: int = 1
    t_g: int = 20
    eta: float = 1e4  # bits/s per unit of spectral efficiency
    selection_rule: str = "ratio"
    payment_rule: str = "threshold"
    reserve_ratio: float = 1.5
    t_cmp: float = 5.0
    t_max_bs: float = 4.0
    cost_coeff: float = 1e-3
    price_markup: float = 0.05

    def __post_init__(self):
        if not (self.t_cmp > 0 and self.t_max_bs > 0):
            raise ValueError("t_cmp and t_max_bs must be positive")
        if not (self.cost_coeff > 0):
            raise ValueError("cost_coeff must be positive")
        if self.price_markup < 0:
            raise ValueError("price_markup must be non-negative")

    def auction_config(self) -> AuctionConfig:
        return AuctionConfig(k_min=self.k_min, t_g=self.t_g, eta=self.eta,
                             selection_rule=self.selection_rule,
                             payment_rule=self.payment_rule,
                             reserve_ratio=self.reserve_ratio)


@dataclass(frozen=True)
class AccuracyBlock:
    """Synthetic stand-in for local training quality.

    Accuracy follows a_max * (1 - exp(-kappa * mass)) where mass accumulates
    the per-round effective data volume of trained rounds, scaled down by
    the round's interruption rate. kappa's default puts a 100-user region
    near 0.9 accuracy around round 30.
    """

    a_max: float = 0.99
    kappa: float = 8e-6
    interruption_discount: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.a_max < 1.0):
            raise ValueError("a_max must be in (0, 1)")
        if not (self.kappa > 0):
            raise ValueError("kappa must be positive")
        if not (0.0 <= self.interruption_discount <= 1.0):
            raise ValueError("interruption_discount must be in [0, 1]")


@dataclass(frozen=True)
class TaskBlock:
    """Per-round training task sizing."""

    bits_per_sample: float = 1000.0
    deadline: float = 10.0

    def __post_init__(self):
        if not (self.bits_per_sample > 0 and self.deadline > 0):
            raise ValueError("bits_per_sample and deadline must be positive")


@dataclass(frozen=True)
class SimConfig:
    """Top-level simulation parameters; defaults follow the standard setup
    (10 servers, 2-3 areas, 50-300 users, congestion coefficient 10,
    rewards drawn across [600, 900], momentum recorded but unused here)."""

    n_servers: int = 10
    n_regions: int = 3
    n_users: int = 100
    congestion_coeff: float = 10.0
    reward_range: Tuple[float, float] = (600.0, 900.0)
    rounds: int = 50
    seed: int = 0
    p_move: float = 0.02
    momentum: Tuple[float, float] = (0.0, 0.9)
    rewards_enabled: bool = True
    data_volume_range: Tuple[float, float] = (50.0, 150.0)
    channel: ChannelParams = field(default_factory=lambda: ChannelParams(
        beta_mean=1.0, p_max=1.0, sigma_w2=0.1, block_length=1))
    evo: EvoGameBlock = field(default_factory=EvoGameBlock)
    migration: MigrationBlock = field(default_factory=MigrationBlock)
    auction: AuctionBlock = field(default_factory=AuctionBlock)
    accuracy: AccuracyBlock = field(default_factory=AccuracyBlock)
    task: TaskBlock = field(default_factory=TaskBlock)

    def __post_init__(self):
        if self.n_servers < 1:
            raise ValueError("n_servers must be positive")
        if not (2 <= self.n_regions <= 3):
            raise ValueError("n_regions must be 2 or 3")
        if not (50 <= self.n_users <= 300):
            raise ValueError("n_users must be within [50, 300]")
        if self.congestion_coeff < 0:
            raise ValueError("congestion_coeff must be non-negative")
        lo, hi = self.reward_range
        if not (0 <= lo <= hi):
            raise ValueError("reward_range must be ordered and non-negative")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if not (0.0 <= self.p_move <= 1.0):
            raise ValueError("p_move must be in [0, 1]")
        dlo, dhi = self.data_volume_range
        if not (0 < dlo <= dhi):
            raise ValueError("data_volume_range must be ordered and positive")

    def region_rewards(self) -> np.ndarray:
        if not self.rewards_enabled:
            return np.zeros(self.n_regions)
        lo, hi = self.reward_range
        return np.linspace(lo, hi, self.n_regions)


@dataclass
class UserState:
    """One mobile user's live state within the simulation."""

    id: int
    region: int
    data_volume: float
    channel: Optional[ChannelState] = None
    active_task: Optional[Task] = None
    cumulative_reward: float = 0.0
    pending_weight: float = 0.0  # early-exit reward claim for this round

    def __post_init__(self):
        if not (self.data_volume > 0):
            raise ValueError("data_volume must be positive")


@dataclass(frozen=True)
class RoundMetrics:
    """Per-round record feeding the metrics stream."""

    round: int
    region_proportions: Tuple[float, ...]
    migrations_triggered: int
    migrations_reassigned: int
    comm_overhead: float
    regional_accuracy: Tuple[float, ...]
    total_payment: float
    participation_rate: float
    auction_satisfied: bool


@dataclass
class SimState:
    """Mutable world state carried between rounds."""

    config: SimConfig
    round: int
    users: List[UserState]
    proportions: np.ndarray
    queues: Dict[int, OnlineQueue]
    region_capacity: np.ndarray
    training_mass: np.ndarray
    accuracy: np.ndarray
    eligible: Set[int]
    last_uploads: int = 0
    tasks_started: int = 0
    tasks_completed: int = 0
    tasks_interrupted: int = 0
    tasks_reassigned: int = 0
    rewards_distributed: float = 0.0
    payments_received: float = 0.0


def _rng(seed: int, round_index: int, tag: int) -> np.random.Generator:
    return np.random.default_rng((seed, round_index, tag))


def init_state(cfg: SimConfig) -> SimState:
    """Users with drawn data volumes, uniform (or configured) proportions."""
    rng = _rng(cfg.seed, 0, _TAG_INIT)
    lo, hi = cfg.data_volume_range
    volumes = rng.uniform(lo, hi, cfg.n_users)
    if cfg.evo.x0 is not None:
        x0 = PopulationState.from_proportions(cfg.evo.x0).x
        if len(x0) != cfg.n_regions:
            raise ValueError("x0 length must equal n_regions")
    else:
        x0 = np.full(cfg.n_regions, 1.0 / cfg.n_regions)
    regions = rng.choice(cfg.n_regions, size=cfg.n_users, p=x0)
    users = [UserState(id=i, region=int(regions[i]), data_volume=float(volumes[i]))
             for i in range(cfg.n_users)]
    base_state = ChannelState(beta=cfg.channel.beta_mean, h_mag2=1.0,
                              power=cfg.channel.p_max)
    q0 = channel_mod.capacity(base_state, cfg.channel)
    return SimState(
        config=cfg, round=0, users=users, proportions=x0,
        queues={b: OnlineQueue() for b in range(cfg.n_regions)},
        region_capacity=np.full(cfg.n_regions, q0),
        training_mass=np.zeros(cfg.n_regions),
        accuracy=np.zeros(cfg.n_regions),
        eligible=set(range(cfg.n_regions)),
    )


def _game_params(state: SimState, rewards: np.ndarray) -> GameParams:
    cfg = state.config
    sums = np.zeros(cfg.n_regions)
    counts = np.zeros(cfg.n_regions)
    for u in state.users:
        sums[u.region] += u.data_volume
        counts[u.region] += 1
    overall = sums.sum() / max(counts.sum(), 1.0)
    volume = np.where(counts > 0, sums / np.maximum(counts, 1.0), overall)
    return GameParams(rewards=tuple(rewards), data_volume=tuple(volume),
                      unit_cost=cfg.evo.unit_cost,
                      learning_rate=cfg.evo.learning_rate)


def _cost_argument(state: SimState, q: float) -> float:
    cfg = state.config
    if cfg.evo.cost_form == "capacity":
        return q
    mean_bits = (sum(u.data_volume for u in state.users) / max(len(state.users), 1)
                 * cfg.task.bits_per_sample)
    return mean_bits / (cfg.auction.eta * max(q, 1e-12))


def synthetic_accuracy(training_mass: float, interruption_rate: float,
                       acc: AccuracyBlock) -> float:
    """Saturating accuracy in the accumulated effective data volume.

    Strictly below a_max, non-decreasing in the mass, and scaled by
    (1 - discount * interruption_rate) for the round.
    """
    if training_mass < 0:
        raise ValueError("training_mass must be non-negative")
    raw = acc.a_max * (1.0 - math.exp(-acc.kappa * training_mass))
    rate = min(max(interruption_rate, 0.0), 1.0)
    return raw * (1.0 - acc.interruption_discount * rate)


def trigger_migrations(state: SimState, x: PopulationState, params: GameParams,
                       rng: np.random.Generator) -> List[int]:
    """Decide departures and queue the interrupted tasks.

    A user leaves when its net utility (reward share minus capacity cost) is
    negative, or on an exogenous move drawn with probability p_move —
    scaled by the congestion coefficient when its region holds more than
    the average number of users (capped at 1).

    Random-stream contract (relied on by replay tests): users are visited
    in ascending id order; every user consumes one uniform draw for the
    exogenous move; each departing user then consumes one more uniform for
    its interruption progress. Departing users' tasks enter their region's
    queue with that progress, and the user's early-exit reward claim is
    0.5 * progress * data_volume, settled at the distribution stage.
    """
    cfg = state.config
    counts = np.zeros(cfg.n_regions)
    for u in state.users:
        counts[u.region] += 1
    mean_load = len(state.users) / cfg.n_regions if cfg.n_regions else 0.0
    departed: List[int] = []
    for u in sorted(state.users, key=lambda s: s.id):
        q_user = channel_mod.capacity(u.channel, cfg.channel)
        utility = evogame.region_utility(x, u.region, params,
                                         _cost_argument(state, q_user))
        p_eff = cfg.p_move
        if counts[u.region] > mean_load:
            p_eff = min(cfg.p_move * cfg.congestion_coeff, 1.0)
        move_draw = rng.random()
        if utility < 0 or move_draw < p_eff:
            progress = rng.random()
            task = replace(u.active_task, progress=progress)
            state.queues[u.region].push(task)
            u.active_task = None
            u.pending_weight = 0.5 * progress * u.data_volume
            state.tasks_interrupted += 1
            departed.append(u.id)
    return departed


def participation_rate(state: SimState) -> float:
    """Fraction of users that uploaded in the last completed round."""
    total = len(state.users)
    if total == 0:
        return 0.0
    return state.last_uploads / total


def run_round(state: SimState) -> Tuple[SimState, RoundMetrics]:
    """Advance the world by one round; mutates and returns the state."""
    cfg = state.config
    r = state.round + 1
    rewards = cfg.region_rewards()

    # stage 1: strategy evolution, re-homing, fresh tasks, fresh channels
    params = _game_params(state, rewards)
    q_cost = np.array([_cost_argument(state, q) for q in state.region_capacity])
    n_steps = max(int(round(cfg.evo.window / cfg.evo.dt)), 1)
    traj = evogame.integrate(PopulationState(state.proportions), params,
                             q_cost, cfg.evo.dt, n_steps)
    x = traj.final_state()
    strategy_rng = _rng(cfg.seed, r, _TAG_STRATEGY)
    drawn = strategy_rng.choice(cfg.n_regions, size=len(state.users), p=x.x)
    for u in state.users:
        u.region = int(drawn[u.id])
        u.pending_weight = 0.0
        u.channel = channel_mod.sample_channel(cfg.channel, r,
                                               (cfg.seed, _TAG_CHANNEL, u.id))
        size = u.data_volume * cfg.task.bits_per_sample
        u.active_task = Task(id=f"r{r}u{u.id}", origin_user=u.id,
                             required_capacity=size / (cfg.auction.eta * cfg.task.deadline),
                             data_size=size, progress=0.0)
        state.tasks_started += 1

    # region aggregates after re-homing drive utilities and bids
    params = _game_params(state, rewards)

    # stage 2: departures, then reassignment of the queued backlog
    departed = trigger_migrations(state, x, params, _rng(cfg.seed, r, _TAG_TRIGGER))
    departed_by_region: Dict[int, List[UserState]] = {b: [] for b in range(cfg.n_regions)}
    for uid in departed:
        u = state.users[uid]
        departed_by_region[u.region].append(u)

    hosted: Dict[int, List[Task]] = {}
    reassigned = 0
    for b in range(cfg.n_regions):
        queue = state.queues[b]
        if len(queue) == 0:
            continue
        stayers = [u for u in state.users if u.region == b and u.active_task is not None]
        if not stayers:
            continue
        roster = []
        for u in stayers:
            cap = channel_mod.capacity(u.channel, cfg.channel)
            headroom = max(cap - u.active_task.required_capacity, 0.0)
            roster.append(Receiver(id=u.id, capacity=headroom))
        result = run_migration(queue, roster, cfg.migration.ga_params(),
                               _rng(cfg.seed, r, _TAG_GA_BASE + b))
        for task_id, receiver in result.plan.mapping.items():
            if receiver is None:
                continue
            task = queue.remove(task_id)
            hosted.setdefault(receiver, []).append(task)
            reassigned += 1
            state.tasks_reassigned += 1

    # uploads: stayers ship their own round task plus any hosted remainders
    region_overhead = np.zeros(cfg.n_regions)
    region_caps: Dict[int, List[float]] = {b: [] for b in range(cfg.n_regions)}
    contribution: Dict[int, float] = {}
    region_deff = np.zeros(cfg.n_regions)
    uploads = 0
    for u in state.users:
        cap = channel_mod.capacity(u.channel, cfg.channel)
        region_caps[u.region].append(cap)
        if u.active_task is None:
            continue
        uploads += 1
        bits = u.active_task.data_size
        samples = u.data_volume
        for task in hosted.get(u.id, ()):
            bits += (1.0 - task.progress) * task.data_size
            samples += (1.0 - task.progress) * task.data_size / cfg.task.bits_per_sample
        if cap > 0:
            region_overhead[u.region] += bits / cap
        contribution[u.id] = samples
        region_deff[u.region] += samples
        state.tasks_completed += 1
    for b in range(cfg.n_regions):
        for u in departed_by_region[b]:
            # progress-weighted contribution of the interrupted portion;
            # pending_weight is 0.5 * progress * data_volume
            region_deff[b] += 2.0 * u.pending_weight
    state.last_uploads = uploads

    # stage 3: synthetic accuracy and the procurement auction
    counts = np.zeros(cfg.n_regions)
    for u in state.users:
        counts[u.region] += 1
    for b in range(cfg.n_regions):
        interrupted = len(departed_by_region[b])
        rate = interrupted / counts[b] if counts[b] else 0.0
        if b in state.eligible:
            state.training_mass[b] += region_deff[b]
            state.accuracy[b] = synthetic_accuracy(state.training_mass[b], rate,
                                                   cfg.accuracy)
    bid_rng = _rng(cfg.seed, r, _TAG_BIDS)
    bids: List[Bid] = []
    capacities: Dict[int, float] = {}
    for b in range(cfg.n_regions):
        if state.accuracy[b] <= 0.0 or region_overhead[b] <= 0.0:
            continue
        base = cfg.auction.cost_coeff * region_overhead[b]
        price = base * (1.0 + cfg.auction.price_markup * bid_rng.random())
        bids.append(Bid(bs_id=b, schedule_id=r, price=price,
                        accuracy=float(state.accuracy[b]),
                        quality=float(state.accuracy[b]),
                        t_cmp=cfg.auction.t_cmp, t_max=cfg.auction.t_max_bs,
                        true_cost=base))
        caps = region_caps[b]
        capacities[b] = float(np.mean(caps)) if caps else 0.0
    outcome: Optional[AuctionOutcome] = None
    try:
        outcome = run_auction(bids, cfg.auction.auction_config(), capacities)
        satisfied = True
    except AuctionInfeasibleError:
        satisfied = False

    # stage 4: distribute payments inside winning regions
    total_payment = 0.0
    winners: Set[int] = set()
    if satisfied:
        total_payment = outcome.total_payment
        winners = {bs for bs, _ in outcome.winners}
        state.payments_received += total_payment
        for b in winners:
            pay = outcome.payments[b]
            weights: Dict[int, float] = {}
            for u in state.users:
                if u.region != b:
                    continue
                if u.active_task is not None:
                    weights[u.id] = contribution[u.id]
                elif u.pending_weight > 0:
                    weights[u.id] = u.pending_weight
            mass = sum(weights.values())
            if mass <= 0:
                continue
            for uid, w in weights.items():
                share = pay * w / mass
                state.users[uid].cumulative_reward += share
                state.rewards_distributed += share
    state.eligible = winners if satisfied else set()

    state.round = r
    state.proportions = x.x.copy()
    for b in range(cfg.n_regions):
        caps = region_caps[b]
        if caps:
            state.region_capacity[b] = float(np.mean(caps))
    metrics = RoundMetrics(
        round=r,
        region_proportions=tuple(float(v) for v in x.x),
        migrations_triggered=len(departed),
        migrations_reassigned=reassigned,
        comm_overhead=float(region_overhead.sum()),
        regional_accuracy=tuple(float(a) for a in state.accuracy),
        total_payment=total_payment,
        participation_rate=participation_rate(state),
        auction_satisfied=satisfied,
    )
    return state, metrics


def run_simulation(cfg: SimConfig) -> Tuple[SimState, List[RoundMetrics]]:
    """Run the configured horizon; rounds=0 returns the initial state only."""
    state = init_state(cfg)
    metrics: List[RoundMetrics] = []
    for _ in range(cfg.rounds):
        state, m = run_round(state)
        metrics.append(m)
    return state, metrics


def metrics_to_dict(m: RoundMetrics) -> dict:
    return {
        "round": m.round,
        "region_proportions": list(m.region_proportions),
        "migrations_triggered": m.migrations_triggered,
        "migrations_reassigned": m.migrations_reassigned,
        "comm_overhead": m.comm_overhead,
        "regional_accuracy": list(m.regional_accuracy),
        "total_payment": m.total_payment,
        "participation_rate": m.participation_rate,
        "auction_satisfied": m.auction_satisfied,
    }
