"""Command-line front end: single runs, parameter sweeps, trace generation
and instruction hexdump. Reports are written as CSV (tabular, consumed by
the plotting tool) and JSON (full timelines, for debugging)."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import replace
from pathlib import Path

from moesim import engine, ndp
from moesim.engine import Report, Strategy
from moesim.workload import (
    ConfigError,
    SimConfig,
    TraceError,
    ingest_trace,
    load_config,
    preset_config,
    synth_routing,
)

CSV_COLUMNS = ["strategy", "mode", "B", "S", "layer", "t_pm_s", "t_am_s",
               "t_gpu_s", "t_md_s", "makespan_s", "tokens_per_s", "H", "alpha"]

SWEEP_KEYS = ["ndp_mem_bw", "bw_pcie", "cpu_mem_bw", "gpu_dense_eff_bw",
              "alpha", "num_ndp_devices", "B", "S", "decode_steps", "skew"]

_STRATEGY_NAMES = [s.value for s in Strategy]


def _fmt(v: float) -> str:
    return f"{v:.9e}"


def _report_rows(report: Report) -> list[dict]:
    """Per-layer rows (aggregated over decode steps) plus a total row."""
    by_layer: dict[int, dict] = {}
    for r in report.rows:
        agg = by_layer.setdefault(r.layer, dict(t_pm=0.0, t_am=0.0, t_gpu=0.0,
                                                t_md=0.0, makespan=0.0,
                                                H=r.H, alpha=r.alpha))
        agg["t_pm"] += r.t_pm
        agg["t_am"] += r.t_am
        agg["t_gpu"] += r.t_gpu
        agg["t_md"] += r.t_md
        agg["makespan"] += r.makespan
        agg["H"] = r.H
        agg["alpha"] = r.alpha
    rows = []
    for layer in sorted(by_layer):
        agg = by_layer[layer]
        rows.append({
            "strategy": report.strategy, "mode": report.mode,
            "B": report.B, "S": report.S, "layer": str(layer),
            "t_pm_s": _fmt(agg["t_pm"]), "t_am_s": _fmt(agg["t_am"]),
            "t_gpu_s": _fmt(agg["t_gpu"]), "t_md_s": _fmt(agg["t_md"]),
            "makespan_s": _fmt(agg["makespan"]),
            "tokens_per_s": _fmt(report.tokens_per_s),
            "H": agg["H"], "alpha": _fmt(agg["alpha"]),
        })
    rows.append({
        "strategy": report.strategy, "mode": report.mode,
        "B": report.B, "S": report.S, "layer": "total",
        "t_pm_s": _fmt(sum(r.t_pm for r in report.rows)),
        "t_am_s": _fmt(sum(r.t_am for r in report.rows)),
        "t_gpu_s": _fmt(sum(r.t_gpu for r in report.rows)),
        "t_md_s": _fmt(sum(r.t_md for r in report.rows)),
        "makespan_s": _fmt(report.latency_s),
        "tokens_per_s": _fmt(report.tokens_per_s),
        "H": report.h_history[-1] if report.h_history else 0,
        "alpha": _fmt(report.alpha_history[-1] if report.alpha_history
                      else 0.0),
    })
    return rows


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _write_json(path: Path, report: Report) -> None:
    payload = {
        "strategy": report.strategy,
        "mode": report.mode,
        "B": report.B,
        "S": report.S,
        "latency_s": report.latency_s,
        "tokens_per_s": report.tokens_per_s,
        "h_history": report.h_history,
        "alpha_history": report.alpha_history,
        "layers": [dataclasses.asdict(r) for r in report.rows],
        "events": [dataclasses.asdict(e) for e in report.timeline.events],
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _load_sim_config(args) -> SimConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset_config(args.preset)
    batch = cfg.batch
    if args.batch_size is not None:
        batch = replace(batch, B=args.batch_size)
    if args.seq_len is not None:
        batch = replace(batch, S=args.seq_len)
    if args.mode is not None:
        batch = replace(batch, mode=args.mode)
    if args.decode_steps is not None:
        batch = replace(batch, decode_steps=args.decode_steps)
    hw = cfg.hardware
    if args.devices is not None:
        hw = replace(hw, num_ndp_devices=args.devices)
    if args.alpha is not None:
        hw = replace(hw, alpha=args.alpha)
    return SimConfig(model=cfg.model, batch=batch, hardware=hw)


def _build_trace(args, cfg: SimConfig):
    if getattr(args, "trace", None):
        return ingest_trace(args.trace, cfg.model)
    return synth_routing(cfg.model, cfg.batch, skew=args.skew, seed=args.seed)


def _apply_sweep(cfg: SimConfig, key: str, value: float) -> SimConfig:
    model, batch, hw = cfg.model, cfg.batch, cfg.hardware
    if key == "ndp_mem_bw":
        # Scale NDP compute with memory bandwidth (rate-matched core).
        scale = value / hw.ndp_mem_bw
        hw = replace(hw, ndp_mem_bw=value,
                     ndp=replace(hw.ndp, clock_hz=hw.ndp.clock_hz * scale))
    elif key in ("bw_pcie", "cpu_mem_bw", "gpu_dense_eff_bw", "alpha"):
        hw = replace(hw, **{key: value})
    elif key == "num_ndp_devices":
        hw = replace(hw, num_ndp_devices=int(value))
    elif key == "B":
        batch = replace(batch, B=int(value))
    elif key == "S":
        batch = replace(batch, S=int(value))
    elif key == "decode_steps":
        batch = replace(batch, decode_steps=int(value))
    elif key != "skew":
        raise ConfigError(f"unknown sweep key '{key}'")
    return SimConfig(model=model, batch=batch, hardware=hw)


def _parse_sweep_value(text: str, base: float) -> float:
    text = text.strip()
    if text.endswith(("x", "X")):
        return float(text[:-1]) * base
    return float(text)


def _sweep_base(cfg: SimConfig, key: str, default_skew: float) -> float:
    if key == "skew":
        return default_skew
    if hasattr(cfg.hardware, key):
        return float(getattr(cfg.hardware, key))
    return float(getattr(cfg.batch, key))


def _add_common_args(p: argparse.ArgumentParser, with_strategy: bool = True) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="YAML config file")
    src.add_argument("--preset", help="named model preset",
                     choices=["switch-large-128", "nllb-moe"])
    if with_strategy:
        p.add_argument("--strategy", action="append", choices=_STRATEGY_NAMES,
                       help="strategy to simulate (repeatable; default: all)")
    p.add_argument("--seed", type=int, help="RNG seed for synthetic routing")
    p.add_argument("--trace", help="replay a routing trace file instead of synthesizing")
    p.add_argument("--skew", type=float, default=1.2,
                   help="Zipf exponent for synthetic routing (default 1.2)")
    p.add_argument("--batch-size", "-B", type=int, dest="batch_size")
    p.add_argument("--seq-len", "-S", type=int, dest="seq_len")
    p.add_argument("--mode", choices=["encoder", "decoder"])
    p.add_argument("--decode-steps", type=int, dest="decode_steps")
    p.add_argument("--devices", type=int, help="number of NDP devices")
    p.add_argument("--alpha", type=float, help="load-balancing scale factor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moesim",
        description="Timing simulator for MoE inference offload strategies")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one configuration")
    _add_common_args(run)
    run.add_argument("--out", required=True, help="output directory")

    sweep = sub.add_parser("sweep", help="sweep one config key")
    _add_common_args(sweep)
    sweep.add_argument("--out", required=True, help="output directory")
    sweep.add_argument("--sweep", required=True, choices=SWEEP_KEYS,
                       metavar="KEY", help=f"axis to sweep ({', '.join(SWEEP_KEYS)})")
    sweep.add_argument("--values", required=True,
                       help="comma-separated values; a trailing 'x' scales the base value")

    tracegen = sub.add_parser("tracegen", help="write a synthetic routing trace")
    _add_common_args(tracegen, with_strategy=False)
    tracegen.add_argument("--out", required=True, help="output trace file")

    hexdump = sub.add_parser("hexdump", help="decode a 64-byte instruction frame")
    frame_src = hexdump.add_mutually_exclusive_group(required=True)
    frame_src.add_argument("--hex", help="frame as a hex string")
    frame_src.add_argument("--file", help="file containing the raw frame")
    return parser


def _require_seed(parser, args) -> None:
    if getattr(args, "trace", None) is None and args.seed is None:
        parser.error("--seed is required for synthetic traces")


def _cmd_run(args) -> int:
    cfg = _load_sim_config(args)
    trace = _build_trace(args, cfg)
    strategies = args.strategy or _STRATEGY_NAMES
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = engine.compare_strategies(trace, cfg.model, cfg.batch, cfg.hardware,
                                      strategies)
    for name in strategies:
        report = table.reports[name]
        _write_csv(out / f"{name}.csv", _report_rows(report), CSV_COLUMNS)
        _write_json(out / f"{name}.json", report)
        print(f"{name}: latency={report.latency_s:.6f}s "
              f"throughput={report.tokens_per_s:.1f} tok/s "
              f"normalized={table.normalized[name]:.3f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_sim_config(args)
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep requires a non-empty value list")
    strategies = args.strategy or _STRATEGY_NAMES
    base = _sweep_base(cfg, args.sweep, args.skew)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = ["sweep_key", "sweep_value"] + CSV_COLUMNS
    rows = []
    for text in values:
        value = _parse_sweep_value(text, base)
        point = _apply_sweep(cfg, args.sweep, value)
        skew = value if args.sweep == "skew" else args.skew
        if getattr(args, "trace", None):
            trace = ingest_trace(args.trace, point.model)
        else:
            trace = synth_routing(point.model, point.batch, skew=skew,
                                  seed=args.seed)
        table = engine.compare_strategies(trace, point.model, point.batch,
                                          point.hardware, strategies)
        for name in strategies:
            total = _report_rows(table.reports[name])[-1]
            rows.append({"sweep_key": args.sweep, "sweep_value": _fmt(value),
                         **total})
    _write_csv(out / "sweep.csv", rows, columns)
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def _cmd_tracegen(args) -> int:
    from moesim.workload import export_trace

    cfg = _load_sim_config(args)
    trace = synth_routing(cfg.model, cfg.batch, skew=args.skew, seed=args.seed)
    export_trace(trace, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_hexdump(args) -> int:
    if args.hex:
        frame = bytes.fromhex(args.hex.replace(" ", ""))
    else:
        frame = Path(args.file).read_bytes()
    print(ndp.format_instruction(ndp.decode_instruction(frame)))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            _require_seed(parser, args)
            return _cmd_run(args)
        if args.command == "sweep":
            _require_seed(parser, args)
            return _cmd_sweep(args)
        if args.command == "tracegen":
            if args.seed is None:
                parser.error("--seed is required for tracegen")
            return _cmd_tracegen(args)
        if args.command == "hexdump":
            return _cmd_hexdump(args)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, TraceError, ndp.CodecError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
