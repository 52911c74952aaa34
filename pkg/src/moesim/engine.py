"""Discrete-event composition of the offload strategies over encoder and
decoder runs, producing per-stream timelines and aggregated reports."""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from moesim import costmodel, ndp, scheduler
from moesim.workload import BatchConfig, HardwareConfig, ModelConfig, RoutingTrace

STREAM_GPU = "GPU_COMPUTE"
STREAM_H2D = "PCIE_H2D"
STREAM_D2H = "PCIE_D2H"
STREAM_CPU = "CPU_COMPUTE"


def ndp_stream(device: int) -> str:
    return f"NDP_COMPUTE:{device}"


class Strategy(str, Enum):
    IDEAL = "ideal"
    GPU_PM = "gpu-pm"
    MD_AM = "md-am"
    MD_LB = "md-lb"
    CPU_AM = "cpu-am"


@dataclass(frozen=True)
class Event:
    stream: str
    t_start: float
    t_end: float
    label: str
    bytes: float = 0.0
    flops: float = 0.0


@dataclass
class Timeline:
    events: list[Event] = field(default_factory=list)

    @property
    def makespan(self) -> float:
        return max((e.t_end for e in self.events), default=0.0)

    def streams(self) -> set[str]:
        return {e.stream for e in self.events}


@dataclass(frozen=True)
class LayerStats:
    layer: int
    step: int
    t_pm: float
    t_am: float
    t_gpu: float
    t_md: float
    dense: float
    makespan: float
    H: int
    alpha: float


@dataclass
class Report:
    strategy: str
    mode: str
    B: int
    S: int
    latency_s: float
    tokens_per_s: float
    rows: list[LayerStats]
    timeline: Timeline
    h_history: list[int] = field(default_factory=list)
    alpha_history: list[float] = field(default_factory=list)


class _Clocks:
    """Per-stream availability cursors; events on one stream never overlap."""

    def __init__(self, timeline: Timeline):
        self.timeline = timeline
        self.avail: dict[str, float] = {}

    def schedule(self, stream: str, duration: float, earliest: float,
                 label: str, nbytes: float = 0.0, flops: float = 0.0) -> float:
        start = max(self.avail.get(stream, 0.0), earliest)
        end = start + duration
        self.avail[stream] = end
        self.timeline.events.append(Event(stream, start, end, label, nbytes, flops))
        return end


class _ExpertCache:
    """Optional LRU cache of expert weights resident in GPU memory."""

    def __init__(self, capacity_bytes: int):
        self.capacity = capacity_bytes
        self.entries: OrderedDict[tuple[int, int], int] = OrderedDict()
        self.used = 0

    def hit(self, layer: int, expert: int) -> bool:
        key = (layer, expert)
        if key in self.entries:
            self.entries.move_to_end(key)
            return True
        return False

    def insert(self, layer: int, expert: int, nbytes: int) -> None:
        if self.capacity <= 0 or nbytes > self.capacity:
            return
        key = (layer, expert)
        if key in self.entries:
            self.entries.move_to_end(key)
            return
        while self.used + nbytes > self.capacity:
            _, old = self.entries.popitem(last=False)
            self.used -= old
        self.entries[key] = nbytes
        self.used += nbytes


def _simulate_split(hist: np.ndarray, H: int, model: ModelConfig,
                    hw: HardwareConfig, clocks: _Clocks, t0: float,
                    alpha: float, layer: int, compute_on_cpu: bool = False,
                    with_amove: bool = True,
                    cache: _ExpertCache | None = None) -> LayerStats:
    """Schedule one MoE layer with H hot experts on the GPU and the rest on
    the NDP devices (or the CPU). Returns aggregate per-stream times."""
    hist = np.asarray(hist)
    num_devices = 1 if compute_on_cpu else hw.num_ndp_devices
    part = scheduler.partition_experts(hist, H, num_devices, alpha)
    slots_total = int(hist.sum())
    t_pm = t_am = t_gpu = t_md = 0.0
    if slots_total == 0:
        return LayerStats(layer, 0, 0, 0, 0, 0, 0, 0, H, alpha)
    n_tok = slots_total // model.top_k
    act_oneway = n_tok * model.d_model * model.dtype_bytes

    # Activation H2D per device, proportional to its routed-token share.
    dev_ready = []
    for dev, experts in enumerate(part.ndp_experts):
        slots_dev = sum(part.token_counts[e] for e in experts)
        if not experts:
            dev_ready.append(t0)
            continue
        nbytes = act_oneway * slots_dev / slots_total if with_amove else 0.0
        dur = costmodel.transfer_time(nbytes, hw.bw_pcie)
        end = clocks.schedule(STREAM_H2D, dur, t0, f"L{layer}:amove->dev{dev}",
                              nbytes=nbytes)
        t_am += dur
        dev_ready.append(end)

    # Hot experts: weight fetch over PCIe, double-buffered with GPU compute.
    compute_ends: list[float] = []
    for i, e in enumerate(part.gpu_experts):
        eb = model.expert_bytes
        cached = cache.hit(layer, e) if cache is not None else False
        if cached:
            xfer_end = t0
        else:
            earliest = t0 if i < 2 else compute_ends[i - 2]
            dur = costmodel.transfer_time(eb, hw.bw_pcie)
            xfer_end = clocks.schedule(STREAM_H2D, dur, earliest,
                                       f"L{layer}:pmove e{e}", nbytes=eb)
            t_pm += dur
            if cache is not None:
                cache.insert(layer, e, eb)
        tokens = part.token_counts[e]
        cdur = costmodel.gpu_expert_time(tokens, model, hw)
        end = clocks.schedule(STREAM_GPU, cdur, xfer_end, f"L{layer}:gpu e{e}",
                              flops=4 * tokens * model.d_model * model.d_ff)
        t_gpu += cdur
        compute_ends.append(end)

    # Cold experts on the NDP devices (or the CPU), serial per device.
    dev_done = []
    for dev, experts in enumerate(part.ndp_experts):
        cursor = dev_ready[dev]
        for e in experts:
            tokens = part.token_counts[e]
            if compute_on_cpu:
                flops = 4 * tokens * model.d_model * model.d_ff
                dur = max(flops / hw.cpu_peak_flops,
                          costmodel.transfer_time(model.expert_bytes, hw.cpu_mem_bw))
                stream = STREAM_CPU
            else:
                dur = ndp.ndp_expert_latency(tokens, model, hw.ndp, hw.ndp_mem_bw)
                stream = ndp_stream(dev)
            cursor = clocks.schedule(stream, dur, cursor, f"L{layer}:{'cpu' if compute_on_cpu else 'ndp'} e{e}",
                                     flops=4 * tokens * model.d_model * model.d_ff)
            t_md += dur
        dev_done.append(cursor)

    # Retrieve device outputs sequentially for the combine step.
    for dev, experts in enumerate(part.ndp_experts):
        if not experts or not with_amove:
            continue
        slots_dev = sum(part.token_counts[e] for e in experts)
        nbytes = act_oneway * slots_dev / slots_total
        dur = costmodel.transfer_time(nbytes, hw.bw_pcie)
        clocks.schedule(STREAM_D2H, dur, dev_done[dev],
                        f"L{layer}:combine<-dev{dev}", nbytes=nbytes)
        t_am += dur

    return LayerStats(layer, 0, t_pm, t_am, t_gpu, t_md, 0.0, 0.0, H, alpha)


def simulate_moe_layer(strategy: Strategy | str, hist: np.ndarray,
                       model: ModelConfig, batch: BatchConfig,
                       hw: HardwareConfig) -> Timeline:
    """Simulate a single MoE layer in isolation, starting at t=0."""
    timeline = Timeline()
    clocks = _Clocks(timeline)
    _run_moe_layer(Strategy(strategy), np.asarray(hist), model, hw, clocks,
                   t0=0.0, alpha=hw.alpha, layer=0)
    return timeline


def _run_moe_layer(strategy: Strategy, hist: np.ndarray, model: ModelConfig,
                   hw: HardwareConfig, clocks: _Clocks, t0: float,
                   alpha: float, layer: int,
                   cache: _ExpertCache | None = None) -> LayerStats:
    activ = scheduler.count_activated(hist)
    if strategy == Strategy.IDEAL:
        t_gpu = 0.0
        cursor = t0
        for e in np.nonzero(hist)[0]:
            dur = costmodel.gpu_expert_time(int(hist[e]), model, hw)
            cursor = clocks.schedule(STREAM_GPU, dur, cursor, f"L{layer}:gpu e{int(e)}")
            t_gpu += dur
        return LayerStats(layer, 0, 0.0, 0.0, t_gpu, 0.0, 0.0, 0.0, 0, alpha)
    if strategy == Strategy.GPU_PM:
        return _simulate_split(hist, activ, model, hw, clocks, t0, alpha, layer,
                               with_amove=False, cache=cache)
    if strategy == Strategy.MD_AM:
        return _simulate_split(hist, 0, model, hw, clocks, t0, alpha, layer)
    if strategy == Strategy.CPU_AM:
        return _simulate_split(hist, 0, model, hw, clocks, t0, alpha, layer,
                               compute_on_cpu=True)
    if strategy == Strategy.MD_LB:
        H = scheduler.compute_H(activ, hw.bw_pcie,
                                hw.ndp_mem_bw * hw.num_ndp_devices, alpha)
        return _simulate_split(hist, H, model, hw, clocks, t0, alpha, layer,
                               cache=cache)
    raise ValueError(f"unknown strategy {strategy!r}")


def simulate_model(strategy: Strategy | str, trace: RoutingTrace,
                   model: ModelConfig, batch: BatchConfig,
                   hw: HardwareConfig) -> Report:
    """Simulate a full encoder pass or decoder run over a routing trace.

    Non-expert (attention/dense) time is serialized with each layer's MoE
    timeline; the run is deterministic for fixed inputs.
    """
    strategy = Strategy(strategy)
    timeline = Timeline()
    clocks = _Clocks(timeline)
    cache = _ExpertCache(hw.gpu_expert_cache_bytes) if hw.gpu_expert_cache_bytes else None
    alpha = hw.alpha
    recent: deque[np.ndarray] = deque(maxlen=8)
    rows: list[LayerStats] = []
    h_hist: list[int] = []
    a_hist: list[float] = []
    dense = costmodel.dense_layer_time(model, hw)
    moe_layers = set(model.moe_layer_indices)
    t = 0.0
    for step in range(batch.steps):
        if (strategy == Strategy.MD_LB and step > 0
                and step % hw.autotune_every == 0 and recent):
            alpha = scheduler.autotune_alpha(list(recent), alpha, model, batch, hw)
        for layer in range(model.num_layers):
            t = clocks.schedule(STREAM_GPU, dense, t, f"L{layer}:dense")
            if layer not in moe_layers:
                continue
            hist = trace.histogram(layer, step)
            start = t
            stats = _run_moe_layer(strategy, hist, model, hw, clocks, t,
                                   alpha, layer, cache=cache)
            t = max(t, timeline.makespan)
            rows.append(LayerStats(layer, step, stats.t_pm, stats.t_am,
                                   stats.t_gpu, stats.t_md, dense,
                                   (t - start) + dense, stats.H, alpha))
            h_hist.append(stats.H)
            a_hist.append(alpha)
            recent.append(hist)
    latency = t
    tokens = batch.total_tokens
    return Report(
        strategy=strategy.value,
        mode=batch.mode,
        B=batch.B,
        S=batch.S,
        latency_s=latency,
        tokens_per_s=tokens / latency if latency > 0 else float("inf"),
        rows=rows,
        timeline=timeline,
        h_history=h_hist,
        alpha_history=a_hist,
    )


@dataclass
class ComparisonTable:
    reports: dict[str, Report]
    normalized: dict[str, float]  # throughput normalized to IDEAL


def compare_strategies(trace: RoutingTrace, model: ModelConfig,
                       batch: BatchConfig, hw: HardwareConfig,
                       strategies: list[Strategy | str] | None = None) -> ComparisonTable:
    strategies = [Strategy(s) for s in (strategies or list(Strategy))]
    reports = {s.value: simulate_model(s, trace, model, batch, hw)
               for s in strategies}
    ideal = reports.get(Strategy.IDEAL.value)
    if ideal is None:
        ideal = simulate_model(Strategy.IDEAL, trace, model, batch, hw)
    base = ideal.tokens_per_s
    normalized = {name: r.tokens_per_s / base for name, r in reports.items()}
    return ComparisonTable(reports=reports, normalized=normalized)
