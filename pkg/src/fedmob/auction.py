"""Greedy procurement auction between base stations and the cloud server.

Base stations submit sell-bids (claimed cost, delivered model accuracy);
the buyer selects at least K of them, each at most once per round, by
repeatedly taking the feasible bid with the lowest cost-per-quality ratio.
Winners are paid by the critical-value rule: the price at which they would
still have won, namely the best losing ratio times their own quality. That
payment is bid-independent for winners, so truthful reporting is optimal;
``verify_ir`` and ``verify_ic`` check both properties empirically.

Two alternative modes exist for comparison runs: a raw-price selection rule
and a ``literal`` payment formula quality * (1 - critical ratio), which can
go negative and is retained only to document that behaviour (plus a simple
``pay_as_bid`` baseline).
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

BsId = Union[int, str]


class AuctionInfeasibleError(ValueError):
    """Raised when fewer base stations are feasible than winners required."""


@dataclass
class Bid:
    """One base station's offer for one training schedule.

    ``true_cost`` is the bidder's private valuation; it is ignored by the
    mechanism itself and consumed only by the IR/IC verifiers.
    """

    bs_id: BsId
    schedule_id: int
    price: float
    accuracy: float
    quality: float
    t_cmp: float
    t_max: float
    true_cost: Optional[float] = None

    def __post_init__(self):
        if not (self.price > 0 and math.isfinite(self.price)):
            raise ValueError("price must be positive and finite")
        if not (0.0 <= self.accuracy < 1.0):
            raise ValueError("accuracy must be in [0, 1)")
        if not (self.quality > 0 and math.isfinite(self.quality)):
            raise ValueError("quality must be positive and finite")
        if not (self.t_cmp > 0 and self.t_max > 0):
            raise ValueError("t_cmp and t_max must be positive")


@dataclass(frozen=True)
class AuctionConfig:
    """Auction-wide knobs.

    k_min: minimum number of winning base stations. t_g: global iteration
    budget gating which accuracies are acceptable. eta: capacity-to-rate
    conversion used in the completion-time constraint. The mode switches
    default to the rules that keep the mechanism IR/IC.
    """

    k_min: int = 1
    t_g: int = 20
    eta: float = 1.0
    selection_rule: str = "ratio"  # or "price"
    payment_rule: str = "threshold"  # or "literal" / "pay_as_bid"
    reserve_ratio: float = 1.5

    def __post_init__(self):
        if self.k_min < 1:
            raise ValueError("k_min must be >= 1")
        if self.t_g < 1:
            raise ValueError("t_g must be >= 1")
        if not (self.eta > 0):
            raise ValueError("eta must be positive")
        if self.selection_rule not in ("ratio", "price"):
            raise ValueError(f"unknown selection rule {self.selection_rule!r}")
        if self.payment_rule not in ("threshold", "literal", "pay_as_bid"):
            raise ValueError(f"unknown payment rule {self.payment_rule!r}")
        if not (self.reserve_ratio > 0):
            raise ValueError("reserve_ratio must be positive")


@dataclass(frozen=True)
class AuctionOutcome:
    """Winners in selection order, the per-BS payments, and the critical bid."""

    winners: Tuple[Tuple[BsId, int], ...]
    selection: Dict[Tuple[BsId, int], int]
    payments: Dict[BsId, float]
    total_payment: float
    critical_bid: Optional[Bid]
    reserve_used: bool = False

    def selected(self, bs_id: BsId) -> int:
        """Selection indicator for a base station (1 if it won)."""
        return 1 if any(w[0] == bs_id for w in self.winners) else 0


def _capacity_of(bid: Bid, capacities: Optional[Mapping[BsId, float]]) -> float:
    if capacities is None:
        return 0.0
    return float(capacities.get(bid.bs_id, 0.0))


def feasible(bid: Bid, cfg: AuctionConfig,
             q: float) -> bool:
    """Check the iteration-budget and completion-time constraints.

    Requires t_g >= 1 / (1 - accuracy) and (t_cmp + q / eta) / t_max >= 1.
    """
    if bid.accuracy >= 1.0:
        raise ValueError("accuracy must be below 1")
    if cfg.t_g < 1.0 / (1.0 - bid.accuracy):
        return False
    return (bid.t_cmp + q / cfg.eta) / bid.t_max >= 1.0


def _score(bid: Bid, cfg: AuctionConfig) -> Tuple:
    if cfg.selection_rule == "ratio":
        return (bid.price / bid.quality, bid.price, bid.bs_id)
    return (bid.price, bid.bs_id)


def _feasible_bids(bids: Sequence[Bid], cfg: AuctionConfig,
                   capacities: Optional[Mapping[BsId, float]]) -> List[Bid]:
    return [b for b in bids if feasible(b, cfg, _capacity_of(b, capacities))]


def greedy_select(bids: Sequence[Bid], cfg: AuctionConfig,
                  capacities: Optional[Mapping[BsId, float]] = None) -> List[Bid]:
    """Pick k_min winners by ascending cost-per-quality ratio.

    Each pass takes the best-scoring feasible bid among base stations not
    yet selected and retires all of that station's bids. Ties break by
    lower price, then identifier. Raises when fewer than k_min distinct
    stations hold feasible bids, naming the shortfall.
    """
    pool = _feasible_bids(bids, cfg, capacities)
    n_stations = len({b.bs_id for b in pool})
    if n_stations < cfg.k_min:
        raise AuctionInfeasibleError(
            f"need {cfg.k_min} feasible base stations, only {n_stations} available")
    winners: List[Bid] = []
    taken: set = set()
    while len(winners) < cfg.k_min:
        candidates = [b for b in pool if b.bs_id not in taken]
        best = min(candidates, key=lambda b: _score(b, cfg))
        winners.append(best)
        taken.add(best.bs_id)
    return winners


def critical_bid(bids: Sequence[Bid], winners: Sequence[Bid], cfg: AuctionConfig,
                 capacities: Optional[Mapping[BsId, float]] = None) -> Bid:
    """Best-scoring feasible bid from a non-winning base station.

    This is the threshold bid used to price every winner; restricting it to
    losing stations keeps payments independent of the winners' own reports.
    """
    taken = {w.bs_id for w in winners}
    losers = [b for b in _feasible_bids(bids, cfg, capacities) if b.bs_id not in taken]
    if not losers:
        raise LookupError("no critical bid: every feasible base station won")
    return min(losers, key=lambda b: _score(b, cfg))


def payment(winner: Bid, critical: Bid, rule: str = "threshold") -> float:
    """Payment for one winner given the critical bid.

    threshold: (critical price / critical quality) * winner quality, the
    largest price at which the winner still wins; never below its own price.
    literal: winner quality * (1 - critical ratio); may go negative.
    pay_as_bid: the winner's own price.
    """
    if rule == "threshold":
        if critical.quality == winner.quality:
            # algebraically (p/q)*q == p; avoid the rounding detour
            return critical.price
        return critical.price / critical.quality * winner.quality
    if rule == "literal":
        return winner.quality - critical.price / critical.quality * winner.quality
    if rule == "pay_as_bid":
        return winner.price
    raise ValueError(f"unknown payment rule {rule!r}")


def run_auction(bids: Sequence[Bid], cfg: AuctionConfig,
                capacities: Optional[Mapping[BsId, float]] = None) -> AuctionOutcome:
    """Feasibility filter, greedy selection, then critical-value payments.

    When no feasible losing bid exists the reserve fallback pays each winner
    reserve_ratio times its own price (pay_as_bid needs no critical bid).
    Deterministic: identical inputs give identical outcomes.
    """
    winners = greedy_select(bids, cfg, capacities)
    critical: Optional[Bid] = None
    reserve_used = False
    if cfg.payment_rule != "pay_as_bid":
        try:
            critical = critical_bid(bids, winners, cfg, capacities)
        except LookupError:
            reserve_used = True
    payments: Dict[BsId, float] = {}
    for w in winners:
        if cfg.payment_rule == "pay_as_bid":
            payments[w.bs_id] = w.price
        elif reserve_used:
            payments[w.bs_id] = cfg.reserve_ratio * w.price
        else:
            payments[w.bs_id] = payment(w, critical, cfg.payment_rule)
    selection = {(w.bs_id, w.schedule_id): 1 for w in winners}
    return AuctionOutcome(
        winners=tuple((w.bs_id, w.schedule_id) for w in winners),
        selection=selection,
        payments=payments,
        total_payment=sum(payments.values()),
        critical_bid=critical,
        reserve_used=reserve_used,
    )


@dataclass(frozen=True)
class IRReport:
    """Winner utilities under their private costs, with any violations."""

    utilities: Dict[BsId, float]
    violations: List[BsId]

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_ir(outcome: AuctionOutcome, bids: Sequence[Bid]) -> IRReport:
    """Check payment - true_cost >= 0 for every winner."""
    by_key = {(b.bs_id, b.schedule_id): b for b in bids}
    utilities: Dict[BsId, float] = {}
    violations: List[BsId] = []
    for key in outcome.winners:
        bid = by_key[key]
        if bid.true_cost is None:
            raise ValueError(f"bid {key} carries no true cost")
        u = outcome.payments[bid.bs_id] - bid.true_cost
        utilities[bid.bs_id] = u
        if u < 0:
            violations.append(bid.bs_id)
    return IRReport(utilities=utilities, violations=violations)


@dataclass(frozen=True)
class ICReport:
    """Best utility gain any bidder can extract by misreporting its cost."""

    max_gain: float
    gains: Dict[BsId, float]

    def ok(self, tol: float = 1e-9) -> bool:
        return self.max_gain <= tol


def _utility(bids: Sequence[Bid], cfg: AuctionConfig,
             capacities: Optional[Mapping[BsId, float]], bidder: Bid) -> float:
    try:
        outcome = run_auction(bids, cfg, capacities)
    except AuctionInfeasibleError:
        return 0.0
    if outcome.selected(bidder.bs_id):
        return outcome.payments[bidder.bs_id] - bidder.true_cost
    return 0.0


def verify_ic(bids: Sequence[Bid], cfg: AuctionConfig,
              capacities: Optional[Mapping[BsId, float]] = None,
              grid_points: int = 50,
              span: Tuple[float, float] = (0.1, 3.0)) -> ICReport:
    """Re-run the auction under unilateral misreports on a price grid.

    The baseline has every station bidding its true cost; each station then
    sweeps its reported price over span * true_cost (grid_points values) with
    everyone else truthful. Reports the largest utility gain over truthful.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    for b in bids:
        if b.true_cost is None:
            raise ValueError("all bids need true costs for the IC check")
    truthful = [replace(b, price=b.true_cost) for b in bids]
    gains: Dict[BsId, float] = {}
    lo, hi = span
    for i, bid in enumerate(truthful):
        base_u = _utility(truthful, cfg, capacities, bid)
        best_gain = 0.0
        v = bid.true_cost
        for g in range(grid_points):
            price = v * (lo + (hi - lo) * g / (grid_points - 1))
            if price <= 0:
                continue
            trial = list(truthful)
            trial[i] = replace(bid, price=price)
            gain = _utility(trial, cfg, capacities, trial[i]) - base_u
            if gain > best_gain:
                best_gain = gain
        gains[bid.bs_id] = max(gains.get(bid.bs_id, 0.0), best_gain)
    return ICReport(max_gain=max(gains.values(), default=0.0), gains=gains)


# --- JSON instance interchange -------------------------------------------

def bid_to_dict(bid: Bid) -> dict:
    d = {"bs": bid.bs_id, "schedule": bid.schedule_id, "price": bid.price,
         "accuracy": bid.accuracy, "quality": bid.quality,
         "t_cmp": bid.t_cmp, "t_max": bid.t_max}
    if bid.true_cost is not None:
        d["true_cost"] = bid.true_cost
    return d


def instance_to_dict(bids: Sequence[Bid], cfg: AuctionConfig,
                     capacities: Optional[Mapping[BsId, float]] = None) -> dict:
    out = {
        "bids": [bid_to_dict(b) for b in bids],
        "config": {"k_min": cfg.k_min, "t_g": cfg.t_g, "eta": cfg.eta,
                   "selection_rule": cfg.selection_rule,
                   "payment_rule": cfg.payment_rule,
                   "reserve_ratio": cfg.reserve_ratio},
    }
    if capacities:
        out["capacities"] = dict(capacities)
    return out


def instance_from_dict(data: Mapping) -> Tuple[List[Bid], AuctionConfig,
                                               Optional[Dict[BsId, float]]]:
    bids = [Bid(bs_id=d["bs"], schedule_id=d["schedule"], price=d["price"],
                accuracy=d["accuracy"], quality=d["quality"],
                t_cmp=d["t_cmp"], t_max=d["t_max"],
                true_cost=d.get("true_cost"))
            for d in data["bids"]]
    cfg = AuctionConfig(**data.get("config", {}))
    capacities = data.get("capacities")
    if capacities is not None:
        capacities = {k: float(v) for k, v in capacities.items()}
    return bids, cfg, capacities


def load_instance(path: str) -> Tuple[List[Bid], AuctionConfig,
                                      Optional[Dict[BsId, float]]]:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def outcome_to_dict(outcome: AuctionOutcome) -> dict:
    return {
        "winners": [[bs, sched] for bs, sched in outcome.winners],
        "selection": {f"{bs}/{sched}": v for (bs, sched), v in outcome.selection.items()},
        "payments": {str(bs): p for bs, p in outcome.payments.items()},
        "total_payment": outcome.total_payment,
        "critical_bid": bid_to_dict(outcome.critical_bid) if outcome.critical_bid else None,
        "reserve_used": outcome.reserve_used,
    }
