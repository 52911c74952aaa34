"""Static configuration (model / batch / hardware) and routing traces.

Routing traces are either synthesized with a controllable Zipf skew or
ingested from line-delimited JSON dumps of real gating decisions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml


class ConfigError(ValueError):
    """Raised for malformed or invariant-violating configuration."""


class TraceError(ValueError):
    """Raised for malformed or out-of-range routing trace records."""


@dataclass(frozen=True)
class ModelConfig:
    num_experts: int
    d_model: int
    d_ff: int
    num_layers: int
    moe_layer_indices: tuple[int, ...]
    top_k: int
    dtype_bytes: int = 2
    nonexpert_bytes_per_layer: int = 0

    def __post_init__(self):
        if self.num_experts < 1:
            raise ConfigError("num_experts must be >= 1")
        if self.d_model < 1:
            raise ConfigError("d_model must be >= 1")
        if self.d_ff < 1:
            raise ConfigError("d_ff must be >= 1")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.top_k not in (1, 2):
            raise ConfigError("top_k must be 1 or 2")
        if self.top_k > self.num_experts:
            raise ConfigError("top_k must not exceed num_experts")
        if self.dtype_bytes not in (1, 2, 4):
            raise ConfigError("dtype_bytes must be 1, 2 or 4")
        if self.nonexpert_bytes_per_layer < 0:
            raise ConfigError("nonexpert_bytes_per_layer must be >= 0")
        idx = tuple(sorted(set(self.moe_layer_indices)))
        if len(idx) != len(self.moe_layer_indices):
            raise ConfigError("moe_layer_indices must not repeat")
        if idx and (idx[0] < 0 or idx[-1] >= self.num_layers):
            raise ConfigError("moe_layer_indices must lie in [0, num_layers)")
        object.__setattr__(self, "moe_layer_indices", idx)

    @property
    def expert_bytes(self) -> int:
        """Weight bytes of one expert: two d_model x d_ff matrices."""
        return 2 * self.d_model * self.d_ff * self.dtype_bytes

    @property
    def total_expert_bytes(self) -> int:
        return len(self.moe_layer_indices) * self.num_experts * self.expert_bytes


@dataclass(frozen=True)
class BatchConfig:
    B: int = 4
    S: int = 512
    mode: str = "encoder"
    decode_steps: int = 16

    def __post_init__(self):
        if self.B < 1:
            raise ConfigError("B must be >= 1")
        if self.S < 1:
            raise ConfigError("S must be >= 1")
        if self.mode not in ("encoder", "decoder"):
            raise ConfigError("mode must be 'encoder' or 'decoder'")
        if self.mode == "decoder" and self.decode_steps < 1:
            raise ConfigError("decode_steps must be >= 1")

    @property
    def tokens_per_routing(self) -> int:
        """Tokens routed per MoE layer invocation (one step for decoders)."""
        return self.B * self.S if self.mode == "encoder" else self.B

    @property
    def steps(self) -> int:
        return 1 if self.mode == "encoder" else self.decode_steps

    @property
    def total_tokens(self) -> int:
        return self.B * self.S if self.mode == "encoder" else self.B * self.decode_steps


@dataclass(frozen=True)
class NdpCoreConfig:
    num_arrays: int = 64
    array_rows: int = 4
    array_cols: int = 4
    clock_hz: float = 1e9
    buffer_bytes: int = 264 * 1024

    def __post_init__(self):
        for name in ("num_arrays", "array_rows", "array_cols", "clock_hz", "buffer_bytes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")

    @property
    def tile_cols(self) -> int:
        """Output-tile width processed per pass (256 with defaults)."""
        return self.num_arrays * self.array_cols


@dataclass(frozen=True)
class HardwareConfig:
    bw_pcie: float = 32e9
    gpu_peak_flops: float = 312e12
    gpu_mem_bw: float = 1.935e12
    # Effective bandwidth for the non-expert (attention/dense) roofline.
    # Calibrated well below HBM peak to stand in for profiled kernel
    # latencies of real Transformer layers; see README.
    gpu_dense_eff_bw: float = 12e9
    cpu_mem_bw: float = 187e9
    cpu_peak_flops: float = 1e12
    ndp: NdpCoreConfig = field(default_factory=NdpCoreConfig)
    ndp_mem_bw: float = 512e9
    ndp_mem_capacity: int = 512 * 10**9
    num_ndp_devices: int = 1
    alpha: float = 1.0
    autotune_every: int = 8
    fixed_op_latency_s: float = 0.0
    # LRU cache of expert weights in GPU memory; 0 disables (on-demand
    # fetch evicts experts immediately, the default offloading behavior).
    gpu_expert_cache_bytes: int = 0

    def __post_init__(self):
        for name in ("bw_pcie", "gpu_peak_flops", "gpu_mem_bw", "gpu_dense_eff_bw",
                     "cpu_mem_bw", "cpu_peak_flops", "ndp_mem_bw"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.ndp_mem_capacity <= 0:
            raise ConfigError("ndp_mem_capacity must be > 0")
        if self.num_ndp_devices < 1:
            raise ConfigError("num_ndp_devices must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.autotune_every < 1:
            raise ConfigError("autotune_every must be >= 1")
        if self.fixed_op_latency_s < 0:
            raise ConfigError("fixed_op_latency_s must be >= 0")
        if self.gpu_expert_cache_bytes < 0:
            raise ConfigError("gpu_expert_cache_bytes must be >= 0")


@dataclass(frozen=True)
class SimConfig:
    model: ModelConfig
    batch: BatchConfig
    hardware: HardwareConfig


@dataclass(frozen=True)
class RoutingTrace:
    """Per (layer, step) token-to-expert assignments.

    ``entries[(layer, step)]`` is a tuple of per-token expert-id tuples,
    each of length ``top_k`` with distinct ids in ``[0, num_experts)``.
    """

    num_experts: int
    top_k: int
    entries: dict[tuple[int, int], tuple[tuple[int, ...], ...]]

    def __post_init__(self):
        for key, tokens in self.entries.items():
            for i, experts in enumerate(tokens):
                if len(experts) != self.top_k or len(set(experts)) != self.top_k:
                    raise TraceError(
                        f"token {i} at {key} must carry {self.top_k} distinct experts"
                    )
                for e in experts:
                    if not 0 <= e < self.num_experts:
                        raise TraceError(f"expert id out of range at {key} token {i}")

    def histogram(self, layer: int, step: int = 0) -> np.ndarray:
        counts = np.zeros(self.num_experts, dtype=np.int64)
        for experts in self.entries.get((layer, step), ()):
            for e in experts:
                counts[e] += 1
        return counts

    def keys(self):
        return sorted(self.entries)


# ---------------------------------------------------------------------------
# Presets (expert totals cross-checked against the published model sizes)
# ---------------------------------------------------------------------------

def _preset_switch_large_128() -> ModelConfig:
    # 24 MoE layers (every other of 48) x 128 experts x 2*1024*4096*2 B = 51.5 GB
    return ModelConfig(
        num_experts=128,
        d_model=1024,
        d_ff=4096,
        num_layers=48,
        moe_layer_indices=tuple(range(1, 48, 2)),
        top_k=1,
        dtype_bytes=2,
        nonexpert_bytes_per_layer=round(1.1e9 / 48),
    )


def _preset_nllb_moe() -> ModelConfig:
    # 12 MoE layers (every fourth of 48) x 128 experts x 2*2048*8192*2 B = 103.1 GB
    return ModelConfig(
        num_experts=128,
        d_model=2048,
        d_ff=8192,
        num_layers=48,
        moe_layer_indices=tuple(range(3, 48, 4)),
        top_k=2,
        dtype_bytes=2,
        nonexpert_bytes_per_layer=round(5.7e9 / 48),
    )


PRESETS = {
    "switch-large-128": _preset_switch_large_128,
    "nllb-moe": _preset_nllb_moe,
}


def preset_config(name: str, batch: BatchConfig | None = None,
                  hardware: HardwareConfig | None = None) -> SimConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (known: {', '.join(sorted(PRESETS))})")
    return SimConfig(
        model=PRESETS[name](),
        batch=batch or BatchConfig(),
        hardware=hardware or HardwareConfig(),
    )


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

_MODEL_KEYS = {"preset", "num_experts", "d_model", "d_ff", "num_layers",
               "moe_layer_indices", "top_k", "dtype_bytes", "nonexpert_bytes_per_layer"}
_BATCH_KEYS = {"B", "S", "mode", "decode_steps"}
_NDP_KEYS = {"num_arrays", "array_rows", "array_cols", "clock_hz", "buffer_bytes"}
_HW_KEYS = {"bw_pcie", "gpu_peak_flops", "gpu_mem_bw", "gpu_dense_eff_bw", "cpu_mem_bw", "cpu_peak_flops",
            "ndp", "ndp_mem_bw", "ndp_mem_capacity", "num_ndp_devices", "alpha",
            "autotune_every", "fixed_op_latency_s", "gpu_expert_cache_bytes"}


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(sorted(unknown))}")


def _build_model(data: dict) -> ModelConfig:
    _check_keys("model", data, _MODEL_KEYS)
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        base = PRESETS.get(preset)
        if base is None:
            raise ConfigError(f"unknown preset '{preset}'")
        model = base()
        if data:
            if "moe_layer_indices" in data:
                data["moe_layer_indices"] = tuple(data["moe_layer_indices"])
            model = replace(model, **data)
        return model
    data.setdefault("moe_layer_indices", tuple(range(data.get("num_layers", 1))))
    data["moe_layer_indices"] = tuple(data["moe_layer_indices"])
    try:
        return ModelConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"model: {exc}") from exc


def load_config(path: str | Path) -> SimConfig:
    """Load and fully validate a YAML simulation config.

    Top-level sections: ``model``, ``batch``, ``hardware`` (all optional
    except ``model``). Unknown keys are rejected.
    """
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"config parse error{where}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("config", raw, {"model", "batch", "hardware"})
    if "model" not in raw:
        raise ConfigError("config must contain a 'model' section")

    model = _build_model(raw["model"] or {})

    batch_data = dict(raw.get("batch") or {})
    _check_keys("batch", batch_data, _BATCH_KEYS)
    try:
        batch = BatchConfig(**batch_data)
    except TypeError as exc:
        raise ConfigError(f"batch: {exc}") from exc

    hw_data = dict(raw.get("hardware") or {})
    _check_keys("hardware", hw_data, _HW_KEYS)
    ndp_data = dict(hw_data.pop("ndp", None) or {})
    _check_keys("hardware.ndp", ndp_data, _NDP_KEYS)
    try:
        hw = HardwareConfig(ndp=NdpCoreConfig(**ndp_data), **hw_data)
    except TypeError as exc:
        raise ConfigError(f"hardware: {exc}") from exc

    return SimConfig(model=model, batch=batch, hardware=hw)


# ---------------------------------------------------------------------------
# Synthetic routing
# ---------------------------------------------------------------------------

def _zipf_probs(n: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-skew)
    return w / w.sum()


def synth_routing(model: ModelConfig, batch: BatchConfig, skew: float = 1.2,
                  seed: int = 0) -> RoutingTrace:
    """Synthesize a routing trace with Zipf-distributed expert popularity.

    Expert popularity follows a Zipf law over a seed-derived random
    permutation of expert ids; each token draws ``top_k`` distinct experts
    (Gumbel top-k, equivalent to sequential sampling without replacement).
    Deterministic for a fixed (model, batch, skew, seed).
    """
    if skew < 0:
        raise ConfigError("skew must be >= 0")
    rng = np.random.default_rng(seed)
    E = model.num_experts
    perm = rng.permutation(E)
    probs = np.empty(E)
    probs[perm] = _zipf_probs(E, skew)
    log_p = np.log(probs)

    entries: dict[tuple[int, int], tuple[tuple[int, ...], ...]] = {}
    for step in range(batch.steps):
        for layer in model.moe_layer_indices:
            n = batch.tokens_per_routing
            keys = log_p + rng.gumbel(size=(n, E))
            if model.top_k == 1:
                picks = np.argmax(keys, axis=1)[:, None]
            else:
                part = np.argpartition(-keys, model.top_k - 1, axis=1)[:, :model.top_k]
                order = np.argsort(-np.take_along_axis(keys, part, axis=1), axis=1)
                picks = np.take_along_axis(part, order, axis=1)
            entries[(layer, step)] = tuple(tuple(int(e) for e in row) for row in picks)
    return RoutingTrace(num_experts=E, top_k=model.top_k, entries=entries)


# ---------------------------------------------------------------------------
# Trace files (line-delimited JSON records)
# ---------------------------------------------------------------------------

def export_trace(trace: RoutingTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for (layer, step) in trace.keys():
            for token, experts in enumerate(trace.entries[(layer, step)]):
                rec = {"layer": layer, "step": step, "token": token,
                       "experts": list(experts)}
                f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def ingest_trace(path: str | Path, model: ModelConfig) -> RoutingTrace:
    """Read a line-delimited trace file and validate it against the model."""
    groups: dict[tuple[int, int], dict[int, tuple[int, ...]]] = {}
    with open(path, encoding="utf-8") as f:
        for idx, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                layer, step = int(rec["layer"]), int(rec.get("step", 0))
                token = int(rec["token"])
                experts = tuple(int(e) for e in rec["experts"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise TraceError(f"malformed trace record at index {idx}: {exc}") from exc
            for e in experts:
                if not 0 <= e < model.num_experts:
                    raise TraceError(f"expert id out of range at record {idx}")
            if len(experts) != model.top_k or len(set(experts)) != model.top_k:
                raise TraceError(
                    f"record {idx} must carry {model.top_k} distinct experts"
                )
            groups.setdefault((layer, step), {})[token] = experts

    entries = {}
    for key, by_token in groups.items():
        if sorted(by_token) != list(range(len(by_token))):
            raise TraceError(f"non-contiguous token indices at {key}")
        entries[key] = tuple(by_token[i] for i in range(len(by_token)))
    return RoutingTrace(num_experts=model.num_experts, top_k=model.top_k,
                        entries=entries)
