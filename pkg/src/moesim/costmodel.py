"""Closed-form data-movement volumes and roofline time estimators.

Movement volumes are exact integer byte counts; GPU/CPU GEMM times use a
max(compute-bound, memory-bound) roofline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from moesim.workload import BatchConfig, HardwareConfig, ModelConfig

if TYPE_CHECKING:
    from moesim.scheduler import ExpertPartition

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class GemmShape:
    T: int  # routed tokens (rows); 0 for an unactivated expert
    K: int  # inner dim
    N: int  # output cols

    def __post_init__(self):
        if self.T < 0 or self.K < 1 or self.N < 1:
            raise ValueError("GemmShape requires T >= 0 and K, N >= 1")


@dataclass(frozen=True)
class WorkflowTimes:
    t_pm: float
    t_am: float
    t_gpu: float
    t_md: float

    @property
    def t_gwf(self) -> float:
        return self.t_pm + self.t_gpu

    @property
    def t_mdwf(self) -> float:
        return self.t_am + self.t_md

    @property
    def makespan(self) -> float:
        return max(self.t_gwf, self.t_mdwf)


def pmove_bytes(num_experts_moved: int, d_model: int, d_ff: int,
                dtype_bytes: int) -> int:
    """Bytes moved to fetch expert weights: two d_model x d_ff matrices each."""
    if min(num_experts_moved, d_model, d_ff, dtype_bytes) < 0:
        raise ValueError("pmove_bytes arguments must be >= 0")
    total = 2 * num_experts_moved * d_model * d_ff * dtype_bytes
    if total > _U64_MAX:
        raise OverflowError("pmove_bytes exceeds 64-bit unsigned range")
    return total


def amove_bytes(B: int, S: int, d_model: int, dtype_bytes: int) -> int:
    """Bytes moved for input plus output activations of B*S tokens."""
    if min(B, S, d_model, dtype_bytes) < 0:
        raise ValueError("amove_bytes arguments must be >= 0")
    total = 2 * B * S * d_model * dtype_bytes
    if total > _U64_MAX:
        raise OverflowError("amove_bytes exceeds 64-bit unsigned range")
    return total


def gpu_gemm_time(shape: GemmShape, hw: HardwareConfig, dtype_bytes: int = 2) -> float:
    """Roofline GEMM latency on the GPU; zero rows cost nothing."""
    if shape.T == 0:
        return 0.0
    flops = 2 * shape.T * shape.K * shape.N
    traffic = (shape.T * shape.K + shape.K * shape.N + shape.T * shape.N) * dtype_bytes
    return max(flops / hw.gpu_peak_flops, traffic / hw.gpu_mem_bw)


def gpu_expert_time(tokens: int, model: ModelConfig, hw: HardwareConfig) -> float:
    """GPU time for one expert FFN (both GEMMs) over ``tokens`` rows."""
    if tokens == 0:
        return 0.0
    up = GemmShape(tokens, model.d_model, model.d_ff)
    down = GemmShape(tokens, model.d_ff, model.d_model)
    return (gpu_gemm_time(up, hw, model.dtype_bytes)
            + gpu_gemm_time(down, hw, model.dtype_bytes))


def transfer_time(nbytes: float, link_bw: float) -> float:
    if link_bw <= 0:
        raise ValueError("link_bw must be > 0")
    return nbytes / link_bw


def dense_layer_time(model: ModelConfig, hw: HardwareConfig) -> float:
    """Non-expert (attention/dense) time per layer: memory-bound roofline on
    the non-expert bytes at the calibrated effective bandwidth."""
    return (model.nonexpert_bytes_per_layer / hw.gpu_dense_eff_bw
            + hw.fixed_op_latency_s)


def analytic_workflow_times(partition: "ExpertPartition", model: ModelConfig,
                            batch: BatchConfig, hw: HardwareConfig) -> WorkflowTimes:
    """Per-layer workflow times for a hot/cold expert split.

    GPU workflow = weight fetch over PCIe + GPU compute of the hot set;
    device workflow = activation transfer + NDP compute of the cold set,
    the latter taken as bandwidth-bound streaming of the cold expert bytes
    over the aggregate device memory bandwidth.
    """
    t_pm = transfer_time(
        pmove_bytes(len(partition.gpu_experts), model.d_model, model.d_ff,
                    model.dtype_bytes),
        hw.bw_pcie)
    t_gpu = sum(gpu_expert_time(partition.token_counts[e], model, hw)
                for e in partition.gpu_experts)
    n_ndp = sum(len(devs) for devs in partition.ndp_experts)
    t_md = transfer_time(
        pmove_bytes(n_ndp, model.d_model, model.d_ff, model.dtype_bytes),
        hw.ndp_mem_bw * hw.num_ndp_devices)
    t_am = transfer_time(
        amove_bytes(batch.B, batch.S if batch.mode == "encoder" else 1,
                    model.d_model, model.dtype_bytes),
        hw.bw_pcie)
    return WorkflowTimes(t_pm=t_pm, t_am=t_am, t_gpu=t_gpu, t_md=t_md)
