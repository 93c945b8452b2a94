"""Uniform-price double auction over per-slot microgrid bid pairs.

The auctioneer sorts buy bids descending and sell bids ascending, then picks
a marginal pair (one buy bid, one sell bid) that prices the slot: everyone
strictly ahead of the marginal bid on their side wins, winners trade at the
marginal prices, and the marginal bids themselves sit out. Candidate marginal
pairs are scored by the realized surplus-style welfare

    sum over matched pairs of  rho1 * beta * ln(x) - rho2 * alpha * x^2 / 2

evaluated at the actually allocated quantities, and the best-scoring feasible
pair wins. A pair is feasible only when its buy price stays at or below the
grid price and strictly above its sell price, so every trade beats buying
from the grid and the auctioneer never runs a deficit.

Books are tiny (one bid pair per MG), so exhaustive scanning of marginal
pairs is exact and cheap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .controller import BidPair, TradeAllocation
from .errors import InvariantViolation, MarketError

DUST_KWH = 1e-9


@dataclass(frozen=True)
class OrderBook:
    """Sorted one-shot order book: (mg_id, price, quantity) per bid."""

    buy_bids: tuple[tuple[int, float, float], ...]
    sell_bids: tuple[tuple[int, float, float], ...]
    rho1: float
    rho2: float

    def __post_init__(self) -> None:
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise MarketError("welfare weights rho1, rho2 must be > 0")
        buys = tuple(b for b in self.buy_bids if b[2] > 0.0)
        sells = tuple(s for s in self.sell_bids if s[2] > 0.0)
        for mg_id, price, qty in buys + sells:
            if price < 0 or qty < 0:
                raise MarketError(f"mg {mg_id}: negative bid price or quantity")
        buys = tuple(sorted(buys, key=lambda b: (-b[1], b[0])))
        sells = tuple(sorted(sells, key=lambda s: (s[1], s[0])))
        seen: set[int] = set()
        for mg_id, _, _ in buys + sells:
            if mg_id in seen:
                raise MarketError(f"mg {mg_id}: appears more than once in the book")
            seen.add(mg_id)
        object.__setattr__(self, "buy_bids", buys)
        object.__setattr__(self, "sell_bids", sells)

    @classmethod
    def from_bids(cls, bids: list[BidPair], rho1: float, rho2: float) -> "OrderBook":
        buys = [
            (b.mg_id, b.buy_price, b.buy_quantity_kwh)
            for b in bids
            if b.buy_quantity_kwh > 0.0
        ]
        sells = [
            (b.mg_id, b.sell_price, b.sell_quantity_kwh)
            for b in bids
            if b.sell_quantity_kwh > 0.0
        ]
        return cls(tuple(buys), tuple(sells), rho1, rho2)


@dataclass(frozen=True)
class ClearingOutcome:
    accepted_buyers: frozenset[int]
    accepted_sellers: frozenset[int]
    buy_clearing_price: float
    sell_clearing_price: float
    allocations: dict[tuple[int, int], float] = field(default_factory=dict)
    scale_factors: dict[tuple[int, int], float] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "ClearingOutcome":
        return cls(frozenset(), frozenset(), 0.0, 0.0, {}, {})

    def total_volume(self) -> float:
        return sum(self.allocations.values())

    def allocation_for(self, mg_id: int) -> TradeAllocation:
        bought = sum(q for (b, _), q in self.allocations.items() if b == mg_id)
        sold = sum(q for (_, s), q in self.allocations.items() if s == mg_id)
        return TradeAllocation(
            mg_id=mg_id,
            bought_kwh=bought,
            sold_kwh=sold,
            buy_unit_price=self.buy_clearing_price if bought > 0 else 0.0,
            sell_unit_price=self.sell_clearing_price if sold > 0 else 0.0,
        )


def pair_quantity(
    buy_price: float, sell_price: float, rho1: float, rho2: float
) -> float:
    """Stationary point of rho1*b*ln(x) - rho2*a*x^2/2: sqrt(rho1*b/(rho2*a))."""
    if sell_price <= 0:
        raise MarketError("sell price must be > 0: pair quantity is unbounded")
    if rho1 <= 0 or rho2 <= 0:
        raise MarketError("welfare weights rho1, rho2 must be > 0")
    if buy_price < 0:
        raise MarketError("buy price must be >= 0")
    return math.sqrt(rho1 * buy_price / (rho2 * sell_price))


def _greedy_allocation(
    buyers: tuple[tuple[int, float, float], ...],
    sellers: tuple[tuple[int, float, float], ...],
    buy_price: float,
    sell_price: float,
    rho1: float,
    rho2: float,
) -> tuple[dict[tuple[int, int], float], dict[tuple[int, int], float], float]:
    """Match winners best-first, each pair capped at its welfare stationary point.

    Returns (allocations, scale factors, realized welfare score). Pairwise
    balance holds by construction: one number per (buyer, seller) pair.
    """
    if sell_price > 0:
        x_star = pair_quantity(buy_price, sell_price, rho1, rho2)
    else:
        x_star = math.inf
    alloc: dict[tuple[int, int], float] = {}
    scales: dict[tuple[int, int], float] = {}
    score = 0.0
    remaining_s = [qty for _, _, qty in sellers]
    for buyer_id, _, buy_qty in buyers:
        rem_b = buy_qty
        for k, (seller_id, _, _) in enumerate(sellers):
            if rem_b <= DUST_KWH:
                break
            rem_s = remaining_s[k]
            if rem_s <= DUST_KWH:
                continue
            x = min(x_star, rem_b, rem_s)
            if x <= DUST_KWH:
                continue
            alloc[(buyer_id, seller_id)] = x
            scales[(buyer_id, seller_id)] = 1.0 if math.isinf(x_star) else x / x_star
            score += rho1 * buy_price * math.log(x) - rho2 * sell_price * x * x / 2.0
            rem_b -= x
            remaining_s[k] -= x
    return alloc, scales, score


def clear(book: OrderBook, grid_price: float) -> ClearingOutcome:
    """Run the double auction for one slot.

    Scans every marginal index pair; winners are the bids strictly ahead of
    the marginal ones, so at least two bids per side are needed for any
    volume. A book that never crosses, or whose best candidate scores a
    nonpositive welfare, clears empty rather than erroring.
    """
    buys, sells = book.buy_bids, book.sell_bids
    if len(buys) < 2 or len(sells) < 2:
        return ClearingOutcome.empty()

    best = None  # (score, mi, ml, alloc, scales)
    for mi in range(1, len(buys)):
        buy_price = buys[mi][1]
        if buy_price > grid_price:
            continue
        for ml in range(1, len(sells)):
            sell_price = sells[ml][1]
            if not buy_price > sell_price:
                break  # sells ascend: later ml only worse
            alloc, scales, score = _greedy_allocation(
                buys[:mi], sells[:ml], buy_price, sell_price, book.rho1, book.rho2
            )
            if alloc and (best is None or score > best[0] + 1e-12):
                best = (score, mi, ml, alloc, scales)

    if best is None or best[0] <= 0.0:
        return ClearingOutcome.empty()
    score, mi, ml, alloc, scales = best
    return ClearingOutcome(
        accepted_buyers=frozenset(b for b, _ in alloc),
        accepted_sellers=frozenset(s for _, s in alloc),
        buy_clearing_price=buys[mi][1],
        sell_clearing_price=sells[ml][1],
        allocations=alloc,
        scale_factors=scales,
    )


def candidate_scores(
    book: OrderBook, grid_price: float
) -> list[tuple[int, int, float]]:
    """Score every feasible marginal pair (audit hook for optimality checks)."""
    out = []
    buys, sells = book.buy_bids, book.sell_bids
    for mi in range(1, len(buys)):
        if buys[mi][1] > grid_price:
            continue
        for ml in range(1, len(sells)):
            if not buys[mi][1] > sells[ml][1]:
                break
            alloc, _, score = _greedy_allocation(
                buys[:mi], sells[:ml], buys[mi][1], sells[ml][1], book.rho1, book.rho2
            )
            if alloc:
                out.append((mi, ml, score))
    return out


def budget_check(outcome: ClearingOutcome) -> float:
    """Auctioneer surplus: buyers' payments minus sellers' receipts, never < 0."""
    volume = outcome.total_volume()
    surplus = (outcome.buy_clearing_price - outcome.sell_clearing_price) * volume
    if surplus < -1e-9:
        raise InvariantViolation(
            f"auctioneer deficit {surplus:.9f}: buy price "
            f"{outcome.buy_clearing_price} below sell price "
            f"{outcome.sell_clearing_price}"
        )
    if volume > DUST_KWH and outcome.buy_clearing_price <= outcome.sell_clearing_price:
        raise InvariantViolation("positive volume with non-crossing clearing prices")
    return surplus


AUDIT_HEADER = (
    "slot",
    "mg_id",
    "side",
    "price",
    "quantity",
    "accepted",
    "cleared_price",
    "cleared_quantity",
)


def audit_rows(slot: int, book: OrderBook, outcome: ClearingOutcome) -> list[tuple]:
    rows: list[tuple] = []
    for mg_id, price, qty in book.buy_bids:
        won = mg_id in outcome.accepted_buyers
        got = outcome.allocation_for(mg_id).bought_kwh if won else 0.0
        rows.append(
            (
                slot,
                mg_id,
                "buy",
                price,
                qty,
                int(won),
                outcome.buy_clearing_price if won else 0.0,
                got,
            )
        )
    for mg_id, price, qty in book.sell_bids:
        won = mg_id in outcome.accepted_sellers
        got = outcome.allocation_for(mg_id).sold_kwh if won else 0.0
        rows.append(
            (
                slot,
                mg_id,
                "sell",
                price,
                qty,
                int(won),
                outcome.sell_clearing_price if won else 0.0,
                got,
            )
        )
    return rows


def write_audit_csv(path, rows: list[tuple], append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(AUDIT_HEADER)
        for slot, mg_id, side, price, qty, won, cp, cq in rows:
            writer.writerow(
                (
                    slot,
                    mg_id,
                    side,
                    f"{price:.6f}",
                    f"{qty:.6f}",
                    won,
                    f"{cp:.6f}",
                    f"{cq:.6f}",
                )
            )
