"""Near-data-processing device model: the 64-byte host instruction codec,
DRAM address mapping, and the systolic-array cycle model for expert GEMMs."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from moesim.costmodel import GemmShape
from moesim.workload import ModelConfig, NdpCoreConfig

FRAME_BYTES = 64
FLAG_IS_NDP = 0x01


class Opcode(IntEnum):
    GEMM = 0x1
    GEMM_RELU = 0x2


class CodecError(ValueError):
    """Raised for invalid instruction frames or descriptors."""


@dataclass(frozen=True)
class Operand:
    addr: int
    size: int


@dataclass(frozen=True)
class NdpInstruction:
    opcode: Opcode
    in_act: Operand
    weights: Operand
    out_act: Operand
    flags: int = FLAG_IS_NDP

    def __post_init__(self):
        if not 0 <= self.flags <= 0xFF:
            raise CodecError("flags must fit in 8 bits")
        for name in ("in_act", "weights", "out_act"):
            op = getattr(self, name)
            if not 0 <= op.addr < 2**64:
                raise CodecError(f"{name}.addr must fit in 64 bits")
            if not 0 < op.size < 2**64:
                raise CodecError(f"{name}.size must be a positive 64-bit value")

    @property
    def is_ndp(self) -> bool:
        return bool(self.flags & FLAG_IS_NDP)


@dataclass(frozen=True)
class PlainMemoryTraffic:
    """A 64-byte frame without the NDP flag: ordinary memory traffic."""
    frame: bytes


# Frame layout: byte0 low nibble = opcode (high nibble zero), byte1 = flags,
# bytes 2-7 reserved, bytes 8-55 three little-endian (addr u64, size u64)
# pairs for in_act / weights / out_act, bytes 56-63 reserved.
_STRUCT = struct.Struct("<BB6xQQQQQQ8x")


def encode_instruction(inst: NdpInstruction) -> bytes:
    if inst.opcode not in (Opcode.GEMM, Opcode.GEMM_RELU):
        raise CodecError(f"reserved opcode 0x{int(inst.opcode):x}")
    frame = _STRUCT.pack(
        int(inst.opcode), inst.flags,
        inst.in_act.addr, inst.in_act.size,
        inst.weights.addr, inst.weights.size,
        inst.out_act.addr, inst.out_act.size,
    )
    assert len(frame) == FRAME_BYTES
    return frame


def decode_instruction(frame: bytes) -> NdpInstruction | PlainMemoryTraffic:
    """Inverse of :func:`encode_instruction`.

    Frames without the NDP flag decode to :class:`PlainMemoryTraffic`
    rather than raising.
    """
    if len(frame) != FRAME_BYTES:
        raise CodecError(f"frame must be {FRAME_BYTES} bytes, got {len(frame)}")
    flags = frame[1]
    if not flags & FLAG_IS_NDP:
        return PlainMemoryTraffic(frame=bytes(frame))
    if frame[0] & 0xF0:
        raise CodecError("nonzero reserved bits in opcode byte")
    if any(frame[2:8]) or any(frame[56:64]):
        raise CodecError("nonzero reserved bytes")
    opcode = frame[0] & 0x0F
    if opcode not in (Opcode.GEMM, Opcode.GEMM_RELU):
        raise CodecError(f"reserved opcode 0x{opcode:x}")
    vals = _STRUCT.unpack(frame)
    return NdpInstruction(
        opcode=Opcode(opcode),
        flags=flags,
        in_act=Operand(vals[2], vals[3]),
        weights=Operand(vals[4], vals[5]),
        out_act=Operand(vals[6], vals[7]),
    )


# ---------------------------------------------------------------------------
# DRAM address mapping (ro-ba-bg-ra-co-ch, channel fastest-varying)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DramGeometry:
    ch_bits: int = 3   # 8 channels
    co_bits: int = 10
    ra_bits: int = 1
    bg_bits: int = 2
    ba_bits: int = 2
    region_capacity: int = 256 * 10**9  # half the device: one bank-parity region


@dataclass(frozen=True)
class DramCoord:
    ro: int
    ba: int
    bg: int
    ra: int
    co: int
    ch: int


def map_address(region: str, byte_offset: int,
                geom: DramGeometry = DramGeometry()) -> DramCoord:
    """Map a region-relative byte offset to a DRAM coordinate.

    Offset bits are consumed least-significant-first as ch, co, ra, bg, ba,
    ro. The bank LSB is then forced to 0 for the parameter region and 1 for
    the activation region, the displaced bit moving into the row index, so
    the two regions never share a bank.
    """
    if region not in ("param", "activation"):
        raise ValueError("region must be 'param' or 'activation'")
    if byte_offset < 0 or byte_offset >= geom.region_capacity:
        raise ValueError(f"offset {byte_offset} outside region capacity")
    off = byte_offset
    ch = off & ((1 << geom.ch_bits) - 1); off >>= geom.ch_bits
    co = off & ((1 << geom.co_bits) - 1); off >>= geom.co_bits
    ra = off & ((1 << geom.ra_bits) - 1); off >>= geom.ra_bits
    bg = off & ((1 << geom.bg_bits) - 1); off >>= geom.bg_bits
    ba = off & ((1 << geom.ba_bits) - 1); off >>= geom.ba_bits
    ro = (off << 1) | (ba & 1)
    ba = (ba & ~1) | (1 if region == "activation" else 0)
    return DramCoord(ro=ro, ba=ba, bg=bg, ra=ra, co=co, ch=ch)


# ---------------------------------------------------------------------------
# Systolic-array timing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NdpTimingResult:
    cycles: int
    seconds: float
    compute_bound: bool
    weight_bytes: int


def ndp_gemm_latency(shape: GemmShape, core: NdpCoreConfig, mem_bw: float,
                     dtype_bytes: int = 2) -> NdpTimingResult:
    """Latency of one GEMM on the NDP core.

    The core processes array_rows x tile_cols output tiles in an
    output-stationary schedule, K cycles per tile plus pipeline fill; the
    result is the max of compute time and weight-streaming time.
    """
    if shape.T == 0:
        return NdpTimingResult(cycles=0, seconds=0.0, compute_bound=False,
                               weight_bytes=0)
    row_tiles = -(-shape.T // core.array_rows)
    col_tiles = -(-shape.N // core.tile_cols)
    cycles = row_tiles * col_tiles * shape.K + (core.array_rows + core.array_cols - 2)
    weight_bytes = shape.K * shape.N * dtype_bytes
    t_compute = cycles / core.clock_hz
    t_mem = weight_bytes / mem_bw
    return NdpTimingResult(
        cycles=cycles,
        seconds=max(t_compute, t_mem),
        compute_bound=t_compute >= t_mem,
        weight_bytes=weight_bytes,
    )


def ndp_expert_latency(tokens: int, model: ModelConfig, core: NdpCoreConfig,
                       mem_bw: float) -> float:
    """Time for one expert FFN on the NDP core: up- and down-projection
    GEMMs; the activation function is fused at zero extra cycles."""
    if tokens < 0:
        raise ValueError("tokens must be >= 0")
    if tokens == 0:
        return 0.0
    up = ndp_gemm_latency(GemmShape(tokens, model.d_model, model.d_ff), core,
                          mem_bw, model.dtype_bytes)
    down = ndp_gemm_latency(GemmShape(tokens, model.d_ff, model.d_model), core,
                            mem_bw, model.dtype_bytes)
    return up.seconds + down.seconds


def format_instruction(decoded: NdpInstruction | PlainMemoryTraffic) -> str:
    """Human-readable dump of a decoded frame (hexdump subcommand)."""
    if isinstance(decoded, PlainMemoryTraffic):
        return "plain memory traffic (isNDP=0)"
    lines = [
        f"opcode    {decoded.opcode.name.lower().replace('_', '+')}",
        f"flags     0x{decoded.flags:02x} (isNDP={int(decoded.is_ndp)})",
        f"in_act    addr=0x{decoded.in_act.addr:x} size={decoded.in_act.size}",
        f"weights   addr=0x{decoded.weights.addr:x} size={decoded.weights.size}",
        f"out_act   addr=0x{decoded.out_act.addr:x} size={decoded.out_act.size}",
    ]
    return "\n".join(lines)
