"""Acceptance suite: the eight shipping gates for this package.

Each test covers one numbered criterion and prints a one-line verdict with
the measured numbers (run ``pytest -s`` or ``-rP`` to see the lines). The
expensive artifacts, the 20-seed paired sweep and the 5-point V sweep with
its clairvoyant oracles, live in module fixtures so the invariant census in
criterion 2 reuses the same runs instead of recomputing them.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
import pytest

from mgtrade.auction import OrderBook, budget_check, clear, pair_quantity
from mgtrade.cli import default_scenario
from mgtrade.controller import (
    BidPair,
    TradeAllocation,
    make_bids,
    marginal_value,
    slot_objective,
    slot_objective_with_settlement,
    solve_slot_program,
)
from mgtrade.ingest import LoadModel, Trace
from mgtrade.model import (
    MGParams,
    MGState,
    PriceBounds,
    SlotInputs,
    compute_a_const,
    compute_bounds,
    compute_v_max,
    virtual_range,
)
from mgtrade.sim import (
    MODE_AUCTION,
    MODE_SOLO,
    MGSpec,
    ScenarioConfig,
    ScenarioTraces,
    mg_subseed,
    offline_oracle,
    realized_inputs,
    run,
    write_slots_csv,
)
from oracles import brute_force_slot_objective, clearing_score, enumerate_clearings


def _verdict(criterion: int, detail: str) -> None:
    print(f"criterion {criterion}: PASS ({detail})")


# ----------------------------------------------------------- shared fixtures


@pytest.fixture(scope="module")
def paired_runs():
    """20 seeds of the reference scenario, both modes, with wall time."""
    out = []
    for seed in range(20):
        t0 = time.perf_counter()
        auction, _ = run(default_scenario(seed=seed, mode=MODE_AUCTION))
        solo, _ = run(default_scenario(seed=seed, mode=MODE_SOLO))
        out.append((auction, solo, time.perf_counter() - t0))
    return out


SWEEP_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)

SWEEP_PRICES = Trace("price", (3.0,) * 8 + (8.0,) * 8 + (14.0,) * 8)
SWEEP_RENEWABLES = (
    Trace("wind1", (10.0,) * 16 + (150.0,) * 8),
    Trace("wind2", (30.0,) * 16 + (180.0,) * 8),
)


def _sweep_config(fraction: float) -> ScenarioConfig:
    """Two deterministic MGs riding a three-step price staircase."""
    pb = PriceBounds(2.0, 16.0)
    mgs = []
    for k in (1, 2):
        base = MGParams(
            id=k,
            battery_capacity_kwh=300.0,
            charge_rate_max_kwh=150.0,
            discharge_rate_max_kwh=150.0,
            serve_rate_max_kwh=150.0,
            dt_load_max_kwh=35.0,
            epsilon=35.0,
            epsilon_max=35.0,
            price_floor=1.0,
            v_weight=1.0,
        )
        params = dataclasses.replace(
            base, v_weight=fraction * compute_v_max(base, pb)
        )
        mgs.append(
            MGSpec(
                params=params,
                load_model=LoadModel("type1", 35.0, 35.0, rng_seed=k),
                renewable_mean_kwh=1.0,
            )
        )
    return ScenarioConfig(
        mgs=tuple(mgs),
        price_bounds=pb,
        horizon_slots=24,
        rho1=1000.0,
        rho2=1e-4,
        mode=MODE_SOLO,
        seed=0,
    )


@pytest.fixture(scope="module")
def v_sweep():
    """Online run plus clairvoyant oracle at five V fractions.

    Each fraction gets its own oracle on its own config: the initial battery
    targets a V-dependent setpoint, so a shared oracle would start from the
    wrong state.
    """
    traces = ScenarioTraces(renewables=SWEEP_RENEWABLES, prices=SWEEP_PRICES)
    points = []
    for fraction in SWEEP_FRACTIONS:
        cfg = _sweep_config(fraction)
        inputs = realized_inputs(cfg, traces)
        summary, _ = run(cfg, traces)
        oracle = offline_oracle(cfg, inputs)
        points.append((fraction, cfg, summary, oracle))
    return points


# ------------------------------------------------------------- criterion 1


def test_criterion_1_trading_beats_solo_on_reference_scenario(paired_runs):
    reductions = []
    slowest = 0.0
    for auction, solo, elapsed in paired_runs:
        assert elapsed < 10.0
        slowest = max(slowest, elapsed)
        a = auction.mean_time_avg_cost()
        s = solo.mean_time_avg_cost()
        assert a < s  # strict, on every seed
        reductions.append((s - a) / s)
    mean_reduction = sum(reductions) / len(reductions)
    assert 0.03 <= mean_reduction <= 0.25
    _verdict(
        1,
        f"mean cost reduction {mean_reduction:.2%}, per-seed "
        f"{min(reductions):.2%}..{max(reductions):.2%}, slowest paired run "
        f"{slowest:.2f}s of 10s budget",
    )


# ------------------------------------------------------------- criterion 2


def _random_small_config(i: int) -> ScenarioConfig:
    """A structurally valid random scenario: 1-3 MGs, 5-20 slots."""
    rng = np.random.default_rng((9001, i))
    n_mgs = int(rng.integers(1, 4))
    horizon = int(rng.integers(5, 21))
    p_min = float(rng.uniform(0.5, 3.0))
    p_max = p_min + float(rng.uniform(1.0, 10.0))
    pb = PriceBounds(p_min, p_max)
    mgs = []
    for k in range(1, n_mgs + 1):
        low = float(rng.uniform(5.0, 30.0))
        high = low + float(rng.uniform(0.0, 30.0))
        t_max = high  # dt_share 0.5 puts the deferrable draw in [low, high]
        eps = float(rng.uniform(0.3, 1.0)) * low
        capacity = (t_max + eps) * float(rng.uniform(1.5, 4.0)) + 20.0
        base = MGParams(
            id=k,
            battery_capacity_kwh=capacity,
            charge_rate_max_kwh=capacity * float(rng.uniform(0.3, 1.0)),
            discharge_rate_max_kwh=capacity * float(rng.uniform(0.3, 1.0)),
            serve_rate_max_kwh=max(t_max * 1.2, capacity * float(rng.uniform(0.3, 1.0))),
            dt_load_max_kwh=t_max * 1.05,
            epsilon=eps,
            epsilon_max=eps,
            price_floor=1.0,
            v_weight=1.0,
        )
        fraction = float(rng.uniform(0.06, 1.0))
        params = dataclasses.replace(
            base, v_weight=fraction * compute_v_max(base, pb)
        )
        mgs.append(
            MGSpec(
                params=params,
                load_model=LoadModel(
                    "type1" if k % 2 else "type2",
                    low,
                    high,
                    rng_seed=mg_subseed(1000 + i, k),
                ),
                renewable_mean_kwh=float(rng.uniform(1.0, 2.0 * high)),
            )
        )
    return ScenarioConfig(
        mgs=tuple(mgs),
        price_bounds=pb,
        horizon_slots=horizon,
        rho1=1000.0,
        rho2=1e-4,
        mode=MODE_AUCTION if i % 2 else MODE_SOLO,
        seed=i,
    )


def test_criterion_2_queue_and_battery_bounds_never_break(paired_runs, v_sweep):
    violations: list[str] = []
    runs = 0
    for auction, solo, _ in paired_runs:
        violations.extend(auction.violations)
        violations.extend(solo.violations)
        runs += 2
    for _, _, summary, _ in v_sweep:
        violations.extend(summary.violations)
        runs += 1
    for i in range(200):
        summary, _ = run(_random_small_config(i))
        violations.extend(summary.violations)
        runs += 1
    assert violations == [], violations[:5]
    _verdict(
        2,
        f"0 bound violations at 1e-9 kWh across {runs} runs "
        f"(40 reference, 5 sweep, 200 randomized)",
    )


# ------------------------------------------------------------- criterion 3


def test_criterion_3_cost_gap_shrinks_like_a_over_v(v_sweep):
    gaps = []
    for fraction, cfg, summary, oracle in v_sweep:
        gap = 0.0
        for m in cfg.mgs:
            mid = m.params.id
            mg_sum = summary.per_mg[mid]
            # the oracle must finish all work arriving before the final slot,
            # so the comparison is only fair if the online run does too
            # (final-slot arrival is the constant 35 kWh deferrable draw)
            arrived_before_last = mg_sum.total_dt_arrived_kwh - 35.0
            assert mg_sum.total_served_kwh >= arrived_before_last - 1e-6
            bound = oracle.per_mg[mid] + compute_a_const(m.params) / m.params.v_weight
            assert mg_sum.time_avg_cost <= bound + 1e-6, (
                f"fraction {fraction} mg {mid}: online {mg_sum.time_avg_cost} "
                f"exceeds oracle-plus-gap bound {bound}"
            )
            gap += mg_sum.time_avg_cost - oracle.per_mg[mid]
        gaps.append(gap)
    pairs = len(gaps) - 1
    nonincreasing = sum(1 for i in range(pairs) if gaps[i + 1] <= gaps[i] + 1e-6)
    assert nonincreasing >= 4
    _verdict(
        3,
        "gap(V) = ["
        + ", ".join(f"{g:.2f}" for g in gaps)
        + f"], nonincreasing on {nonincreasing}/{pairs} pairs, "
        "online <= oracle + A/V at all 5 fractions",
    )


# ------------------------------------------------------------- criterion 4


def test_criterion_4_slot_program_beats_exhaustive_grid():
    rng = np.random.default_rng(4242)
    worst_ratio = 0.0
    for _ in range(500):
        capacity = float(rng.uniform(10.0, 50.0))
        battery = float(rng.uniform(0.0, capacity))
        c_max = float(rng.uniform(1.0, capacity))
        d_max = float(rng.uniform(1.0, capacity))
        j_max = float(rng.uniform(1.0, 50.0))
        q = float(rng.uniform(0.0, 50.0))
        z = float(rng.uniform(0.0, 50.0))
        x = float(rng.uniform(-50.0, 50.0))
        renewable = float(rng.uniform(0.0, 50.0))
        di = float(rng.uniform(0.0, 50.0))
        price = float(rng.uniform(0.5, 5.0))
        v = float(rng.uniform(0.5, 20.0))
        if rng.random() < 0.5:
            bought, sold = float(rng.uniform(0.0, 20.0)), 0.0
        else:
            bought, sold = 0.0, float(rng.uniform(0.0, 20.0))

        params = MGParams(
            id=1,
            battery_capacity_kwh=capacity,
            charge_rate_max_kwh=c_max,
            discharge_rate_max_kwh=d_max,
            serve_rate_max_kwh=j_max,
            dt_load_max_kwh=1.0,
            epsilon=0.5,
            epsilon_max=0.5,
            price_floor=1.0,
            v_weight=v,
        )
        state = MGState(battery, q, z, x, ((0, q),) if q > 0 else ())
        inputs = SlotInputs(renewable, di, 0.0, price)
        # a one-sided allocation at zero prices: settlement is not part of
        # the objective under test
        trade = TradeAllocation(1, bought, sold, 0.0, 0.0)
        pb = PriceBounds(0.25, max(6.0, price))

        action = solve_slot_program(state, inputs, trade, params, pb)
        got = slot_objective(state, inputs, action, params)
        best_grid = brute_force_slot_objective(
            battery, q, z, x, renewable, di, price, bought, sold,
            capacity, c_max, d_max, j_max, v, step=1.0,
        )
        # exact solver never loses to the grid (grid points are feasible) and
        # lands within one grid cell's worth of objective movement
        increment = (abs(x) + (q + z) + v * price) * 1.0
        assert got <= best_grid + 1e-7
        assert best_grid - got <= increment + 1e-7
        if increment > 0:
            worst_ratio = max(worst_ratio, (best_grid - got) / increment)
    _verdict(
        4,
        f"500/500 instances within one cell (worst gap "
        f"{worst_ratio:.3f} of the cell increment), solver never above grid",
    )


# ------------------------------------------------------------- criterion 5


def test_criterion_5_clearing_maximizes_welfare_with_clean_settlement():
    rng = np.random.default_rng(505)
    cleared = 0
    for _ in range(200):
        n_buy = int(rng.integers(0, 6))
        n_sell = int(rng.integers(0, 6))
        buys = [
            (k + 1, float(rng.uniform(0.1, 10.0)), float(rng.uniform(0.0, 300.0)))
            for k in range(n_buy)
        ]
        sells = [
            (
                100 + k,
                0.0 if rng.random() < 0.15 else float(rng.uniform(0.05, 8.0)),
                float(rng.uniform(0.0, 300.0)),
            )
            for k in range(n_sell)
        ]
        rho1 = float(rng.choice([1.0, 1000.0]))
        rho2 = float(rng.choice([1e-4, 1.0]))
        grid = float(rng.uniform(0.5, 12.0))

        book = OrderBook(tuple(buys), tuple(sells), rho1, rho2)
        outcome = clear(book, grid)
        best_score, best_alloc, _, _ = enumerate_clearings(
            buys, sells, rho1, rho2, grid
        )
        if not outcome.allocations:
            assert best_score is None or best_score <= 1e-9
            continue

        cleared += 1
        score = clearing_score(
            outcome.allocations,
            outcome.buy_clearing_price,
            outcome.sell_clearing_price,
            rho1,
            rho2,
        )
        assert best_score is not None
        assert abs(score - best_score) <= 1e-9
        assert set(outcome.allocations) == set(best_alloc)

        # settlement invariants on every positive-volume clearing
        assert outcome.buy_clearing_price > outcome.sell_clearing_price
        assert budget_check(outcome) >= 0.0
        bought = sum(
            outcome.allocation_for(b).bought_kwh for b in outcome.accepted_buyers
        )
        sold = sum(
            outcome.allocation_for(s).sold_kwh for s in outcome.accepted_sellers
        )
        assert abs(bought - sold) <= 1e-9
        assert abs(bought - outcome.total_volume()) <= 1e-9
        buy_px = {m: p for m, p, _ in book.buy_bids}
        buy_cap = {m: qty for m, _, qty in book.buy_bids}
        sell_px = {m: p for m, p, _ in book.sell_bids}
        sell_cap = {m: qty for m, _, qty in book.sell_bids}
        for b in outcome.accepted_buyers:
            # individual rationality and quantity caps
            assert buy_px[b] >= outcome.buy_clearing_price - 1e-12
            assert outcome.allocation_for(b).bought_kwh <= buy_cap[b] + 1e-9
        for s in outcome.accepted_sellers:
            assert sell_px[s] <= outcome.sell_clearing_price + 1e-12
            assert outcome.allocation_for(s).sold_kwh <= sell_cap[s] + 1e-9
    assert cleared >= 20
    _verdict(
        5,
        f"{cleared}/200 books cleared with volume; every clearing matched the "
        "exhaustive maximum and kept settlement invariants",
    )


# ------------------------------------------------------------- criterion 6


def _random_market(rng: np.random.Generator, n_mgs: int):
    """One slot of a market: per-MG params, state, inputs at a shared price."""
    pb = PriceBounds(1.0, 20.0)
    price = float(rng.uniform(2.0, 12.0))
    market = []
    for k in range(1, n_mgs + 1):
        surplus_role = rng.random() < 0.5
        capacity = float(rng.uniform(80.0, 400.0))
        base = MGParams(
            id=k,
            battery_capacity_kwh=capacity,
            charge_rate_max_kwh=float(rng.uniform(20.0, capacity)),
            discharge_rate_max_kwh=float(rng.uniform(20.0, capacity)),
            serve_rate_max_kwh=float(rng.uniform(30.0, capacity)),
            dt_load_max_kwh=20.0,
            epsilon=float(rng.uniform(1.0, 8.0)),
            epsilon_max=8.0,
            price_floor=1.0,
            v_weight=1.0,
        )
        params = dataclasses.replace(
            base,
            v_weight=float(rng.uniform(0.2, 1.0)) * compute_v_max(base, pb),
        )
        bounds = compute_bounds(params, pb)
        battery = float(rng.uniform(0.0, capacity))
        lo, _ = virtual_range(params, bounds)
        if surplus_role:
            q = 0.0 if rng.random() < 0.5 else float(rng.uniform(0.0, 5.0))
            z = 0.0
            renewable = float(rng.uniform(60.0, 200.0))
            di = float(rng.uniform(0.0, 30.0))
        else:
            # backlog sized to a target valuation so bids often land inside
            # the band where a pair can actually clear against the grid price
            backlog = float(rng.uniform(1.5, 11.0)) * params.v_weight
            z = min(backlog * float(rng.uniform(0.0, 0.5)), bounds.z_max)
            q = backlog - z
            renewable = float(rng.uniform(0.0, 25.0))
            di = float(rng.uniform(20.0, 80.0))
        state = MGState(battery, q, z, lo + battery, ((0, q),) if q > 0 else ())
        market.append((params, state, SlotInputs(renewable, di, 0.0, price)))
    return market


def _tweaked_bid(bid: BidPair, delta: float) -> BidPair | None:
    """The bid with its present side's price scaled by delta."""
    if bid.buy_quantity_kwh > 0:
        return BidPair(
            bid.mg_id,
            bid.sell_price,
            bid.buy_price * delta,
            bid.sell_quantity_kwh,
            bid.buy_quantity_kwh,
        )
    if bid.sell_quantity_kwh > 0:
        return BidPair(
            bid.mg_id,
            bid.sell_price * delta,
            bid.buy_price,
            bid.sell_quantity_kwh,
            bid.buy_quantity_kwh,
        )
    return None


def _realized_value(params, state, inputs, outcome, pb) -> float:
    trade = outcome.allocation_for(params.id)
    action = solve_slot_program(state, inputs, trade, params, pb)
    return slot_objective_with_settlement(state, inputs, action, trade, params)


def _declared_surplus(params, state, outcome) -> float:
    """Trade surplus measured at the declared valuation (Q+Z)/V."""
    value = marginal_value(state, params)
    a = outcome.allocation_for(params.id)
    return (value - a.buy_unit_price) * a.bought_kwh + (
        a.sell_unit_price - value
    ) * a.sold_kwh


def test_criterion_6_truthful_bidding_is_unimprovable():
    pb = PriceBounds(1.0, 20.0)
    rng = np.random.default_rng(66)

    # 100 three-MG markets, scored by the deviator's realized slot objective
    # including settlement. A 3-MG book can never cross (clearing needs two
    # bids per side and every MG bids one side), so this population also pins
    # down that deviations cannot conjure volume out of thin books.
    deviations = 0
    improvements = 0
    for _ in range(100):
        market = _random_market(rng, 3)
        bids = {p.id: make_bids(s, ins, p) for p, s, ins in market}
        grid = market[0][2].grid_price
        truthful = clear(OrderBook.from_bids(list(bids.values()), 1000.0, 1e-4), grid)
        assert truthful.total_volume() == 0.0
        for params, state, inputs in market:
            base_value = _realized_value(params, state, inputs, truthful, pb)
            for delta in (0.9, 1.1):
                tweaked = _tweaked_bid(bids[params.id], delta)
                if tweaked is None:
                    continue
                others = [b for m, b in bids.items() if m != params.id]
                deviated = clear(
                    OrderBook.from_bids(others + [tweaked], 1000.0, 1e-4), grid
                )
                value = _realized_value(params, state, inputs, deviated, pb)
                deviations += 1
                if value < base_value - 1e-9:
                    improvements += 1
    assert improvements == 0

    # 200 four-MG markets so books actually cross, scored by trade surplus at
    # the declared valuation: the price rule pays winners against the marginal
    # bids, so no one gains surplus by shading or inflating their price.
    # (The full slot objective is not the right yardstick once books cross:
    # cleared energy also substitutes for grid purchases, which no single
    # posted valuation can price.)
    surplus_deviations = 0
    surplus_improvements = 0
    cleared = 0
    for _ in range(200):
        market = _random_market(rng, 4)
        bids = {p.id: make_bids(s, ins, p) for p, s, ins in market}
        grid = market[0][2].grid_price
        truthful = clear(OrderBook.from_bids(list(bids.values()), 1000.0, 1e-4), grid)
        if truthful.total_volume() > 0:
            cleared += 1
        for params, state, inputs in market:
            base = _declared_surplus(params, state, truthful)
            for delta in (0.9, 1.1):
                tweaked = _tweaked_bid(bids[params.id], delta)
                if tweaked is None:
                    continue
                others = [b for m, b in bids.items() if m != params.id]
                deviated = clear(
                    OrderBook.from_bids(others + [tweaked], 1000.0, 1e-4), grid
                )
                surplus_deviations += 1
                if _declared_surplus(params, state, deviated) > base + 1e-9:
                    surplus_improvements += 1
    assert cleared >= 30
    assert surplus_improvements == 0
    _verdict(
        6,
        f"0 of {deviations} deviations improved the realized objective on "
        f"3-MG markets; 0 of {surplus_deviations} improved declared-value "
        f"surplus on 4-MG markets ({cleared} of 200 cleared volume)",
    )


# ------------------------------------------------------------- criterion 7


def test_criterion_7_lone_pair_clears_the_stationary_quantity():
    book = OrderBook(
        buy_bids=((1, 2.2, 6000.0), (2, 2.0, 1.0)),
        sell_bids=((3, 0.9, 6000.0), (4, 1.0, 1.0)),
        rho1=1000.0,
        rho2=1e-4,
    )
    outcome = clear(book, grid_price=5.0)
    want = math.sqrt(1000.0 * 2.0 / (1e-4 * 1.0))
    assert pair_quantity(2.0, 1.0, 1000.0, 1e-4) == pytest.approx(want, rel=1e-12)
    assert outcome.buy_clearing_price == pytest.approx(2.0)
    assert outcome.sell_clearing_price == pytest.approx(1.0)
    volume = outcome.total_volume()
    assert volume == pytest.approx(want, rel=1e-6)
    assert outcome.accepted_buyers == frozenset({1})
    assert outcome.accepted_sellers == frozenset({3})
    _verdict(
        7,
        f"volume {volume:.6f} vs sqrt(rho1*beta/(rho2*alpha)) = {want:.6f} "
        "at clearing prices (2.0, 1.0)",
    )


# ------------------------------------------------------------- criterion 8


def test_criterion_8_reruns_are_byte_identical(tmp_path):
    cfg = default_scenario()
    blobs = []
    for name in ("first", "second"):
        _, records = run(cfg)
        path = tmp_path / f"{name}.csv"
        write_slots_csv(path, records)
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]
    _verdict(8, f"two runs, {len(blobs[0])} bytes of slot log, identical")
