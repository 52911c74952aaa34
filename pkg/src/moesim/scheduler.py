"""GPU/NDP load balancing: activated-expert counting, the hot-expert count
H, hot/cold partitioning, alpha auto-tuning, and multi-device assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from moesim import costmodel
from moesim.workload import BatchConfig, HardwareConfig, ModelConfig


@dataclass(frozen=True)
class ExpertPartition:
    gpu_experts: tuple[int, ...]
    ndp_experts: tuple[tuple[int, ...], ...]  # one list per device
    H: int
    alpha: float
    token_counts: dict[int, int] = field(default_factory=dict)

    @property
    def num_activated(self) -> int:
        return len(self.gpu_experts) + sum(len(d) for d in self.ndp_experts)


def count_activated(hist: np.ndarray) -> int:
    """Experts with at least one routed token."""
    return int(np.count_nonzero(np.asarray(hist)))


def compute_H(expert_activ: int, bw_pcie: float, bw_md: float, alpha: float) -> int:
    """Number of hot experts assigned to the GPU workflow.

    Balances the bandwidth-bound sides of the two workflows:
    H = alpha * bw_pcie / (bw_md + bw_pcie) * activated, rounded half-up
    and clamped to [0, activated].
    """
    if bw_pcie <= 0 or bw_md <= 0:
        raise ValueError("bandwidths must be > 0")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    h = alpha * bw_pcie / (bw_md + bw_pcie) * expert_activ
    return max(0, min(expert_activ, math.floor(h + 0.5)))


def partition_experts(hist: np.ndarray, H: int, num_devices: int,
                      alpha: float = 1.0) -> ExpertPartition:
    """Split activated experts: top-H by token count to the GPU, the rest
    dealt round-robin (sorted by descending count) across NDP devices."""
    hist = np.asarray(hist)
    activated = [int(e) for e in np.nonzero(hist)[0]]
    if H > len(activated):
        raise ValueError(f"H={H} exceeds activated expert count {len(activated)}")
    if num_devices < 1:
        raise ValueError("num_devices must be >= 1")
    # Descending token count, ties toward the lower expert id.
    by_heat = sorted(activated, key=lambda e: (-int(hist[e]), e))
    gpu = tuple(by_heat[:H])
    devices: list[list[int]] = [[] for _ in range(num_devices)]
    for i, e in enumerate(by_heat[H:]):
        devices[i % num_devices].append(e)
    return ExpertPartition(
        gpu_experts=gpu,
        ndp_experts=tuple(tuple(d) for d in devices),
        H=H,
        alpha=alpha,
        token_counts={e: int(hist[e]) for e in activated},
    )


def candidate_makespan(hist: np.ndarray, H: int, model: ModelConfig,
                       batch: BatchConfig, hw: HardwareConfig) -> float:
    """MoE-layer makespan estimate for a given hot-expert count.

    Unlike the bandwidth-bound approximation used to derive H, this charges
    the cold set its actual systolic-array latencies, so compute-intense
    cold experts are visible to the auto-tuner."""
    from moesim import ndp  # local import: ndp does not depend on scheduler

    part = partition_experts(hist, H, hw.num_ndp_devices)
    wf = costmodel.analytic_workflow_times(part, model, batch, hw)
    t_md = max((sum(ndp.ndp_expert_latency(part.token_counts[e], model,
                                           hw.ndp, hw.ndp_mem_bw)
                    for e in dev_experts)
                for dev_experts in part.ndp_experts), default=0.0)
    return max(wf.t_gwf, wf.t_am + t_md)


def autotune_alpha(recent_batches: list[np.ndarray], current_alpha: float,
                   model: ModelConfig, batch: BatchConfig,
                   hw: HardwareConfig) -> float:
    """Retune alpha by sweeping H candidates {H-2 .. H+2} over recent
    routing histograms and keeping the one with the lowest summed layer
    makespan. Returns alpha unchanged when the base H is zero."""
    if not recent_batches:
        raise ValueError("need at least one recent histogram")
    agg_bw = hw.ndp_mem_bw * hw.num_ndp_devices
    base_h = compute_H(count_activated(recent_batches[-1]), hw.bw_pcie, agg_bw,
                       current_alpha)
    if base_h == 0:
        return current_alpha

    best_delta, best_cost = 0, None
    for delta in sorted(range(-2, 3), key=abs):
        cost = 0.0
        for hist in recent_batches:
            activ = count_activated(hist)
            h = max(0, min(activ, compute_H(activ, hw.bw_pcie, agg_bw,
                                            current_alpha) + delta))
            cost += candidate_makespan(hist, h, model, batch, hw)
        if best_cost is None or cost < best_cost * (1 - 1e-12):
            best_delta, best_cost = delta, cost
    new_h = max(base_h + best_delta, 0)
    if new_h == 0:
        # Keep alpha positive while still rounding the next H down to zero.
        return current_alpha * 0.49 / base_h
    return current_alpha * new_h / base_h
