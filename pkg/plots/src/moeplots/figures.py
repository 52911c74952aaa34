"""Render simulator CSV reports (and routing traces) into figures.

Four figure kinds are supported:

- ``throughput-bars``: grouped bars of throughput per strategy, normalized
  to a baseline strategy.
- ``sensitivity``: throughput speedup over the baseline as a function of a
  swept hardware parameter, one line per strategy.
- ``scaling``: makespan versus swept device count, one line per strategy.
- ``histogram``: distribution of routed tokens per expert from a routing
  trace, bucketed in groups of 8 tokens.

Every figure also writes a sidecar JSON file (``<out>.json``) holding the
exact rows read from the inputs plus the derived series, so tests can check
fidelity without image diffing.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

REPORT_COLUMNS = ["strategy", "mode", "B", "S", "layer", "t_pm_s", "t_am_s",
                  "t_gpu_s", "t_md_s", "makespan_s", "tokens_per_s", "H",
                  "alpha"]
SWEEP_COLUMNS = ["sweep_key", "sweep_value"] + REPORT_COLUMNS

FIGURE_KINDS = ("throughput-bars", "sensitivity", "scaling", "histogram")

HIST_BUCKET = 8


class SchemaError(ValueError):
    """An input file does not conform to the expected tabular schema."""


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple[str, ...]
    kind: str
    out: str
    baseline: str = "ideal"

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(
                f"unknown figure kind '{self.kind}' "
                f"(expected one of {', '.join(FIGURE_KINDS)})")
        if not self.inputs:
            raise ValueError("at least one input file is required")


def load_report_rows(path: str, columns: list[str]) -> list[dict]:
    """Read a CSV report, checking that every expected column is present."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for col in columns:
            if col not in header:
                raise SchemaError(f"missing column '{col}' in {path}")
        return list(reader)


def load_trace_counts(path: str) -> list[dict[int, int]]:
    """Read a routing trace (JSON lines) into per-(layer, step) token counts
    keyed by expert id."""
    groups: dict[tuple[int, int], dict[int, int]] = defaultdict(
        lambda: defaultdict(int))
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                key = (int(rec["layer"]), int(rec["step"]))
                experts = [int(e) for e in rec["experts"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad trace record ({exc})")
            for e in experts:
                groups[key][e] += 1
    if not groups:
        raise SchemaError(f"{path}: empty trace")
    return [dict(groups[k]) for k in sorted(groups)]


def _total_rows(rows: list[dict]) -> list[dict]:
    return [r for r in rows if r["layer"] == "total"]


def _require_baseline(by_strategy: dict, baseline: str, path_hint: str) -> None:
    if baseline not in by_strategy:
        raise ValueError(
            f"baseline strategy '{baseline}' not present in {path_hint}")


def _throughput_bars(spec: FigureSpec) -> dict:
    rows = []
    for path in spec.inputs:
        rows.extend(load_report_rows(path, REPORT_COLUMNS))
    totals = _total_rows(rows)
    if not totals:
        raise SchemaError("no 'total' rows found in the input reports")
    groups: dict[tuple[str, str, str], dict[str, float]] = defaultdict(dict)
    for r in totals:
        key = (r["mode"], r["B"], r["S"])
        groups[key][r["strategy"]] = float(r["tokens_per_s"])
    series: dict[str, list[float]] = defaultdict(list)
    labels = []
    for key in sorted(groups):
        per_strategy = groups[key]
        _require_baseline(per_strategy, spec.baseline,
                          f"group mode={key[0]} B={key[1]} S={key[2]}")
        base = per_strategy[spec.baseline]
        labels.append(f"{key[0]} B={key[1]} S={key[2]}")
        for strategy, tput in sorted(per_strategy.items()):
            series[strategy].append(tput / base)

    fig, ax = plt.subplots(figsize=(1.5 + 1.5 * len(labels), 4))
    width = 0.8 / len(series)
    for i, (strategy, values) in enumerate(sorted(series.items())):
        xs = [j + i * width for j in range(len(labels))]
        ax.bar(xs, values, width=width, label=strategy)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(labels))])
    ax.set_xticklabels(labels, rotation=15, ha="right")
    ax.set_ylabel(f"throughput normalized to {spec.baseline}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.out)
    plt.close(fig)
    return {"rows": totals, "groups": labels,
            "normalized": {k: v for k, v in sorted(series.items())}}


def _line_figure(spec: FigureSpec, ylabel: str, normalize: bool) -> dict:
    rows = []
    for path in spec.inputs:
        rows.extend(load_report_rows(path, SWEEP_COLUMNS))
    totals = _total_rows(rows)
    if not totals:
        raise SchemaError("no 'total' rows found in the input reports")
    sweep_key = totals[0]["sweep_key"]
    points: dict[float, dict[str, float]] = defaultdict(dict)
    metric = "tokens_per_s" if normalize else "makespan_s"
    for r in totals:
        points[float(r["sweep_value"])][r["strategy"]] = float(r[metric])
    xs = sorted(points)
    series: dict[str, list[float]] = defaultdict(list)
    for x in xs:
        per_strategy = points[x]
        if normalize:
            _require_baseline(per_strategy, spec.baseline,
                              f"sweep point {sweep_key}={x:g}")
            base = per_strategy[spec.baseline]
        for strategy, value in sorted(per_strategy.items()):
            series[strategy].append(value / base if normalize else value)

    fig, ax = plt.subplots(figsize=(6, 4))
    for strategy, values in sorted(series.items()):
        ax.plot(xs, values, marker="o", label=strategy)
    ax.set_xlabel(sweep_key)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(spec.out)
    plt.close(fig)
    return {"rows": totals, "sweep_key": sweep_key, "x": xs,
            "series": {k: v for k, v in sorted(series.items())}}


def _histogram(spec: FigureSpec) -> dict:
    counts_per_group = []
    for path in spec.inputs:
        counts_per_group.extend(load_trace_counts(path))
    num_experts = 1 + max(e for g in counts_per_group for e in g)
    max_tokens = max(max(g.values()) for g in counts_per_group)
    num_buckets = max_tokens // HIST_BUCKET + 1
    fractions = [0.0] * num_buckets
    for group in counts_per_group:
        buckets = [0] * num_buckets
        for e in range(num_experts):
            buckets[group.get(e, 0) // HIST_BUCKET] += 1
        for i, n in enumerate(buckets):
            fractions[i] += n / num_experts / len(counts_per_group)
    labels = [f"{i * HIST_BUCKET}-{(i + 1) * HIST_BUCKET - 1}"
              for i in range(num_buckets)]

    fig, ax = plt.subplots(figsize=(1.0 + 0.5 * num_buckets, 4))
    ax.bar(range(num_buckets), fractions)
    ax.set_xticks(range(num_buckets))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_xlabel("tokens routed to expert")
    ax.set_ylabel("fraction of experts")
    fig.tight_layout()
    fig.savefig(spec.out)
    plt.close(fig)
    return {"num_experts": num_experts, "bucket_width": HIST_BUCKET,
            "buckets": labels, "fractions": fractions}


def render(spec: FigureSpec) -> Path:
    """Render the figure and its sidecar JSON; returns the sidecar path."""
    if spec.kind == "throughput-bars":
        payload = _throughput_bars(spec)
    elif spec.kind == "sensitivity":
        payload = _line_figure(spec, f"speedup over {spec.baseline}",
                               normalize=True)
    elif spec.kind == "scaling":
        payload = _line_figure(spec, "makespan (s)", normalize=False)
    else:
        payload = _histogram(spec)
    payload = {"kind": spec.kind, "baseline": spec.baseline,
               "inputs": list(spec.inputs), **payload}
    sidecar = Path(spec.out).with_suffix(Path(spec.out).suffix + ".json")
    sidecar.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return sidecar
