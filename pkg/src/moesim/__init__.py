"""Timing simulator for Mixture-of-Experts inference across GPU, PCIe, CPU
and near-data-processing (NDP) memory devices.

The simulator is timing-level only: it models data movement and compute
latency for expert FFN layers under several offload strategies, but never
touches real tensor data.
"""

from moesim.workload import (
    BatchConfig,
    ConfigError,
    HardwareConfig,
    ModelConfig,
    NdpCoreConfig,
    RoutingTrace,
    SimConfig,
    ingest_trace,
    load_config,
    preset_config,
    synth_routing,
)
from moesim.engine import Report, Strategy, compare_strategies, simulate_model

__all__ = [
    "BatchConfig",
    "ConfigError",
    "HardwareConfig",
    "ModelConfig",
    "NdpCoreConfig",
    "Report",
    "RoutingTrace",
    "SimConfig",
    "Strategy",
    "compare_strategies",
    "ingest_trace",
    "load_config",
    "preset_config",
    "simulate_model",
    "synth_routing",
]
