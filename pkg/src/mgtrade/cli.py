"""Command-line front end: config files, runs, sweeps, log audits.

Configs are single JSON documents mirroring the simulator's ScenarioConfig.
Per-MG blocks accept either an explicit `v_weight` or a `v_fraction` of the
MG's admissible maximum, and derive `dt_load_max_kwh` from the load model
when not given. Renewable and price traces default to the seeded synthetic
generators; CSV paths can be supplied instead (renewables are rescaled to
the configured mean, prices are clipped into the configured band).

Exit codes: 0 success, 2 usage (bad flags, missing files), 3 data
(unparseable config or trace, malformed logs), 4 invariant violations.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from .auction import write_audit_csv
from .errors import ConfigError, InvariantViolation, ParseError, SimError
from .ingest import LoadModel, Trace, load_trace, scale_wind
from .model import MGParams, PriceBounds, compute_a_const, compute_v_max
from .sim import (
    MODE_AUCTION,
    MODE_SOLO,
    MGSpec,
    RunSummary,
    ScenarioConfig,
    ScenarioTraces,
    bound_audit,
    build_traces,
    mg_subseed,
    offline_oracle,
    read_slots_csv,
    realized_inputs,
    run,
    verify_log_rows,
    write_slots_csv,
    write_summary_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4

OUT_ENV = "MGTRADE_OUT"

_MODE_FLAG = {"auction": MODE_AUCTION, "solo": MODE_SOLO}

_TYPE_DEFAULTS = {
    "type1": {"load_low_kwh": 100.0, "load_high_kwh": 200.0, "renewable_mean_kwh": 200.0},
    "type2": {"load_low_kwh": 200.0, "load_high_kwh": 400.0, "renewable_mean_kwh": 600.0},
}


def _mg_from_dict(d: dict, seed: int, index: int, pb: PriceBounds) -> MGSpec:
    mg_type = d.get("mg_type", "type1")
    if mg_type not in _TYPE_DEFAULTS:
        raise ConfigError(f"mg {d.get('id', index)}: unknown mg_type {mg_type!r}")
    merged = dict(_TYPE_DEFAULTS[mg_type])
    merged.update(d)
    mg_id = int(merged.get("id", index + 1))
    dt_share = float(merged.get("dt_share", 0.5))
    low = float(merged["load_low_kwh"])
    high = float(merged["load_high_kwh"])
    dt_load_max = float(merged.get("dt_load_max_kwh", 2.0 * dt_share * high))
    epsilon = float(merged.get("epsilon", 2.0 * dt_share * low))
    epsilon_max = float(merged.get("epsilon_max", epsilon))

    probe = MGParams(
        id=mg_id,
        battery_capacity_kwh=float(merged["battery_capacity_kwh"]),
        charge_rate_max_kwh=float(merged["charge_rate_max_kwh"]),
        discharge_rate_max_kwh=float(merged["discharge_rate_max_kwh"]),
        serve_rate_max_kwh=float(merged["serve_rate_max_kwh"]),
        dt_load_max_kwh=dt_load_max,
        epsilon=epsilon,
        epsilon_max=epsilon_max,
        price_floor=float(merged.get("price_floor", 1.0)),
        v_weight=1.0,
    )
    if "v_weight" in merged:
        v_weight = float(merged["v_weight"])
    else:
        fraction = float(merged.get("v_fraction", 1.0))
        if not 0 < fraction <= 1:
            raise ConfigError(f"mg {mg_id}: v_fraction must be in (0, 1]")
        v_weight = fraction * compute_v_max(probe, pb)
    params = dataclasses.replace(probe, v_weight=v_weight)
    load_seed = int(merged.get("load_seed", mg_subseed(seed, index)))
    return MGSpec(
        params=params,
        load_model=LoadModel(
            mg_type=mg_type,
            low_kwh=low,
            high_kwh=high,
            rng_seed=load_seed,
            dt_share=dt_share,
        ),
        renewable_mean_kwh=float(merged["renewable_mean_kwh"]),
    )


def config_from_dict(doc: dict) -> tuple[ScenarioConfig, dict]:
    """Build a ScenarioConfig from a parsed JSON document.

    Returns the config plus the trace-path block (possibly empty) so callers
    can materialize file-backed traces.
    """
    try:
        pb_doc = doc.get("price_bounds", {})
        pb = PriceBounds(
            p_min=float(pb_doc.get("p_min", 2.0)), p_max=float(pb_doc.get("p_max", 16.0))
        )
        seed = int(doc.get("seed", 0))
        mgs = tuple(
            _mg_from_dict(d, seed, k, pb) for k, d in enumerate(doc.get("mgs", []))
        )
        init_b = doc.get("initial_battery_kwh")
        config = ScenarioConfig(
            mgs=mgs,
            price_bounds=pb,
            horizon_slots=int(doc.get("horizon_slots", 120)),
            rho1=float(doc.get("rho1", 1000.0)),
            rho2=float(doc.get("rho2", 0.0001)),
            mode=str(doc.get("mode", MODE_AUCTION)),
            seed=seed,
            initial_battery_kwh=None if init_b is None else float(init_b),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad config document: {e}") from e
    traces_doc = {
        "price_trace": doc.get("price_trace"),
        "renewable_traces": doc.get("renewable_traces"),
    }
    return config, traces_doc


def config_to_dict(config: ScenarioConfig, traces_doc: dict | None = None) -> dict:
    doc = {
        "seed": config.seed,
        "horizon_slots": config.horizon_slots,
        "mode": config.mode,
        "rho1": config.rho1,
        "rho2": config.rho2,
        "price_bounds": {
            "p_min": config.price_bounds.p_min,
            "p_max": config.price_bounds.p_max,
        },
        "initial_battery_kwh": config.initial_battery_kwh,
        "mgs": [
            {
                "id": m.params.id,
                "mg_type": m.load_model.mg_type,
                "battery_capacity_kwh": m.params.battery_capacity_kwh,
                "charge_rate_max_kwh": m.params.charge_rate_max_kwh,
                "discharge_rate_max_kwh": m.params.discharge_rate_max_kwh,
                "serve_rate_max_kwh": m.params.serve_rate_max_kwh,
                "dt_load_max_kwh": m.params.dt_load_max_kwh,
                "epsilon": m.params.epsilon,
                "epsilon_max": m.params.epsilon_max,
                "price_floor": m.params.price_floor,
                "v_weight": m.params.v_weight,
                "load_low_kwh": m.load_model.low_kwh,
                "load_high_kwh": m.load_model.high_kwh,
                "dt_share": m.load_model.dt_share,
                "load_seed": m.load_model.rng_seed,
                "renewable_mean_kwh": m.renewable_mean_kwh,
            }
            for m in config.mgs
        ],
    }
    if traces_doc:
        doc.update({k: v for k, v in traces_doc.items() if v})
    return doc


def load_config(path: str | os.PathLike) -> tuple[ScenarioConfig, dict]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{p}: invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ParseError(f"{p}: config must be a JSON object")
    return config_from_dict(doc)


def default_scenario(
    seed: int = 7, mode: str = MODE_AUCTION, horizon: int = 120
) -> ScenarioConfig:
    """Six-MG reference scenario: three light and three heavy microgrids."""
    doc = {
        "seed": seed,
        "horizon_slots": horizon,
        "mode": mode,
        "rho1": 1000.0,
        "rho2": 0.0001,
        "price_bounds": {"p_min": 2.0, "p_max": 16.0},
        "mgs": [
            {
                "id": k + 1,
                "mg_type": "type1" if k < 3 else "type2",
                "battery_capacity_kwh": 3000.0,
                "charge_rate_max_kwh": 1500.0,
                "discharge_rate_max_kwh": 1500.0,
                "serve_rate_max_kwh": 1500.0,
                "price_floor": 1.0,
                "v_fraction": 1.0,
            }
            for k in range(6)
        ],
    }
    config, _ = config_from_dict(doc)
    return config


def materialize_traces(
    config: ScenarioConfig, traces_doc: dict
) -> ScenarioTraces:
    """Build traces from files when paths are configured, else synthesize."""
    synthetic = build_traces(config)
    price_path = traces_doc.get("price_trace")
    renewable_paths = traces_doc.get("renewable_traces")
    prices = synthetic.prices
    renewables = list(synthetic.renewables)
    if price_path:
        raw = load_trace(price_path)
        pb = config.price_bounds
        clipped = tuple(min(max(v, pb.p_min), pb.p_max) for v in raw.values)
        prices = Trace(name=raw.name, values=clipped)
    if renewable_paths:
        if len(renewable_paths) != len(config.mgs):
            raise ConfigError(
                f"{len(renewable_paths)} renewable traces for {len(config.mgs)} MGs"
            )
        for k, rp in enumerate(renewable_paths):
            if rp:
                renewables[k] = scale_wind(
                    load_trace(rp), config.mgs[k].renewable_mean_kwh
                )
    return ScenarioTraces(renewables=tuple(renewables), prices=prices)


def _emit_run(
    out_dir: Path,
    config: ScenarioConfig,
    traces_doc: dict,
    summary: RunSummary,
    records,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_slots_csv(out_dir / "slots.csv", records)
    write_summary_csv(out_dir / "summary.csv", summary)
    audit_lines = [row for rec in records for row in rec.market_audit]
    write_audit_csv(out_dir / "auction_audit.csv", audit_lines)
    report = bound_audit(summary, config, oracle=None)
    (out_dir / "audit.txt").write_text(report.render() + "\n")
    (out_dir / "config.json").write_text(
        json.dumps(config_to_dict(config, traces_doc), indent=2) + "\n"
    )


def _resolve_out(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "out"))


def _apply_overrides(config: ScenarioConfig, args, mode: str) -> ScenarioConfig:
    updates: dict = {"mode": mode}
    if args.seed is not None:
        updates["seed"] = args.seed
        mgs = []
        for k, m in enumerate(config.mgs):
            lm = dataclasses.replace(m.load_model, rng_seed=mg_subseed(args.seed, k))
            mgs.append(dataclasses.replace(m, load_model=lm))
        updates["mgs"] = tuple(mgs)
    if args.horizon is not None:
        updates["horizon_slots"] = args.horizon
    return dataclasses.replace(config, **updates)


def cmd_run(args) -> int:
    if args.config:
        config, traces_doc = load_config(args.config)
    else:
        config, traces_doc = default_scenario(), {}
    out_root = _resolve_out(args)

    modes = [MODE_AUCTION, MODE_SOLO] if args.mode == "both" else [_MODE_FLAG[args.mode]]
    results: dict[str, RunSummary] = {}
    for mode in modes:
        cfg = _apply_overrides(config, args, mode)
        traces = materialize_traces(cfg, traces_doc)
        t0 = time.perf_counter()
        summary, records = run(cfg, traces)
        elapsed = time.perf_counter() - t0
        sub = out_root / ("auction" if mode == MODE_AUCTION else "solo")
        _emit_run(sub, cfg, traces_doc, summary, records)
        results[mode] = summary
        print(
            f"{mode}: mean time-avg cost {summary.mean_time_avg_cost():.6f}, "
            f"grid {summary.total_grid_kwh:.1f} kWh, traded "
            f"{summary.total_traded_kwh:.1f} kWh, violations "
            f"{summary.violation_count}, {elapsed:.2f}s -> {sub}"
        )

    if len(results) == 2:
        solo = results[MODE_SOLO].total_cost
        auct = results[MODE_AUCTION].total_cost
        lines = [
            f"no_auction total cost:   {solo:.6f}",
            f"with_auction total cost: {auct:.6f}",
        ]
        if solo > 0:
            reduction = 100.0 * (solo - auct) / solo
            lines.append(f"cost reduction: {reduction:.2f}%")
        grid_solo = results[MODE_SOLO].total_grid_kwh
        grid_auct = results[MODE_AUCTION].total_grid_kwh
        if grid_solo > 0:
            lines.append(
                f"grid purchase reduction: "
                f"{100.0 * (grid_solo - grid_auct) / grid_solo:.2f}%"
            )
        text = "\n".join(lines)
        print(text)
        out_root.mkdir(parents=True, exist_ok=True)
        (out_root / "comparison.txt").write_text(text + "\n")

    if any(s.violation_count for s in results.values()):
        print("invariant violations recorded; see audit output", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _audit_one(run_dir: Path) -> tuple[bool, list[str]]:
    config_path = run_dir / "config.json"
    slots_path = run_dir / "slots.csv"
    if not config_path.exists() or not slots_path.exists():
        raise SimError(f"{run_dir}: missing config.json or slots.csv")
    config, _ = config_from_dict(json.loads(config_path.read_text()))
    problems = verify_log_rows(config, read_slots_csv(slots_path))
    return not problems, problems


def cmd_audit(args) -> int:
    root = Path(args.dir)
    if not root.exists():
        raise FileNotFoundError(f"audit target not found: {root}")

    sweep_csv = root / "sweep.csv"
    if sweep_csv.exists() and not (root / "slots.csv").exists():
        return _audit_sweep(sweep_csv)

    targets = []
    if (root / "slots.csv").exists():
        targets = [root]
    else:
        targets = sorted(
            d for d in root.iterdir() if d.is_dir() and (d / "slots.csv").exists()
        )
    if not targets:
        raise SimError(f"{root}: no run outputs to audit")

    all_ok = True
    for t in targets:
        ok, problems = _audit_one(t)
        print(f"{t}: {'PASS' if ok else 'FAIL'} ({len(problems)} problems)")
        for p in problems[:20]:
            print(f"  {p}")
        if len(problems) > 20:
            print(f"  ... {len(problems) - 20} more")
        all_ok = all_ok and ok
    return EXIT_OK if all_ok else EXIT_INVARIANT


def _audit_sweep(sweep_csv: Path) -> int:
    import csv as _csv

    with open(sweep_csv, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        raise SimError(f"{sweep_csv}: empty")
    by_mg: dict[str, list[dict]] = {}
    for r in rows:
        by_mg.setdefault(r["mg_id"], []).append(r)
    print(f"{'fraction':>8} {'mg':>4} {'v_weight':>12} {'online':>12} "
          f"{'oracle':>12} {'gap':>12} {'a_over_v':>12}")
    ok = True
    for mid, group in sorted(by_mg.items()):
        group.sort(key=lambda r: float(r["fraction"]))
        prev_av = None
        for r in group:
            print(
                f"{float(r['fraction']):>8.3f} {mid:>4} "
                f"{float(r['v_weight']):>12.4f} "
                f"{float(r['online_time_avg_cost']):>12.4f} "
                f"{r['oracle_time_avg_cost']:>12} {r['gap']:>12} "
                f"{float(r['a_over_v']):>12.4f}"
            )
            av = float(r["a_over_v"])
            if prev_av is not None and av > prev_av + 1e-12:
                ok = False
            prev_av = av
    print("a_over_v monotone: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_sweep(args) -> int:
    if args.config:
        config, traces_doc = load_config(args.config)
    else:
        config, traces_doc = default_scenario(), {}
    fractions = []
    for tok in args.fractions.split(","):
        f = float(tok)
        if not 0 < f <= 1:
            raise ConfigError(f"sweep fraction {f} outside (0, 1]")
        fractions.append(f)

    out_root = _resolve_out(args)
    out_root.mkdir(parents=True, exist_ok=True)
    mode = MODE_SOLO if args.mode == "both" else _MODE_FLAG[args.mode]

    rows = []
    base = _apply_overrides(config, args, mode)
    for f in fractions:
        mgs = []
        for m in base.mgs:
            v_max = compute_v_max(m.params, base.price_bounds)
            mgs.append(
                dataclasses.replace(
                    m, params=dataclasses.replace(m.params, v_weight=f * v_max)
                )
            )
        cfg = dataclasses.replace(base, mgs=tuple(mgs))
        traces = materialize_traces(cfg, traces_doc)
        summary, _ = run(cfg, traces)
        oracle = None
        try:
            oracle = offline_oracle(cfg, realized_inputs(cfg, traces))
        except SimError:
            pass  # scenario too large for the clairvoyant LP; leave blank
        for spec in cfg.mgs:
            mid = spec.params.id
            online = summary.per_mg[mid].time_avg_cost
            orc = oracle.per_mg[mid] if oracle else None
            rows.append(
                {
                    "fraction": f"{f:.6f}",
                    "mg_id": mid,
                    "v_weight": f"{spec.params.v_weight:.6f}",
                    "online_time_avg_cost": f"{online:.6f}",
                    "oracle_time_avg_cost": "" if orc is None else f"{orc:.6f}",
                    "gap": "" if orc is None else f"{online - orc:.6f}",
                    "a_over_v": (
                        f"{compute_a_const(spec.params) / spec.params.v_weight:.6f}"
                    ),
                }
            )
        print(f"fraction {f:.3f}: total cost {summary.total_cost:.4f}")

    import csv as _csv

    with open(out_root / "sweep.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    (out_root / "config.json").write_text(
        json.dumps(config_to_dict(config, traces_doc), indent=2) + "\n"
    )
    print(f"wrote {out_root / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgtrade",
        description="Microgrid energy trading simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario")
    p_run.add_argument("--config", help="scenario JSON (built-in default if omitted)")
    p_run.add_argument("--out", help=f"output dir (default ${OUT_ENV} or ./out)")
    p_run.add_argument(
        "--mode", choices=["auction", "solo", "both"], default="both"
    )
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--horizon", type=int)
    p_run.set_defaults(func=cmd_run)

    p_audit = sub.add_parser("audit", help="re-verify a run directory from its logs")
    p_audit.add_argument("dir", help="run output dir, parent of runs, or sweep dir")
    p_audit.set_defaults(func=cmd_audit)

    p_sweep = sub.add_parser("sweep", help="sweep v_weight fractions of v_max")
    p_sweep.add_argument("--config", help="scenario JSON (built-in default if omitted)")
    p_sweep.add_argument("--out", help=f"output dir (default ${OUT_ENV} or ./out)")
    p_sweep.add_argument("--fractions", default="0.2,0.4,0.6,0.8,1.0")
    p_sweep.add_argument(
        "--mode", choices=["auction", "solo", "both"], default="solo"
    )
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--horizon", type=int)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantViolation, SimError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
