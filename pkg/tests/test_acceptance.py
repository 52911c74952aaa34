"""End-to-end acceptance checks.

Each test exercises one acceptance criterion and prints a single
``ACCEPTANCE <n>: PASS|FAIL`` line (visible with ``pytest -s``).
"""

import contextlib
import csv
from dataclasses import replace

import numpy as np
import pytest

from moesim.cli import main as cli_main
from moesim.costmodel import (
    GemmShape,
    amove_bytes,
    analytic_workflow_times,
    gpu_expert_time,
    pmove_bytes,
    transfer_time,
)
from moesim.engine import Strategy, simulate_model
from moesim.ndp import (
    NdpInstruction,
    Opcode,
    Operand,
    PlainMemoryTraffic,
    CodecError,
    decode_instruction,
    encode_instruction,
    map_address,
    ndp_gemm_latency,
)
from moesim.scheduler import compute_H, partition_experts
from moesim.workload import (
    BatchConfig,
    ModelConfig,
    NdpCoreConfig,
    preset_config,
    synth_routing,
)


@contextlib.contextmanager
def report(n, label):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {n}: FAIL ({label})")
        raise
    print(f"ACCEPTANCE {n}: PASS ({label})")


def test_1_movement_volume_exactness():
    with report(1, "movement volumes match big-integer oracles"):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            E = int(rng.integers(0, 512))
            dm = int(rng.integers(1, 8193))
            dff = int(rng.integers(1, 32769))
            B = int(rng.integers(0, 65))
            S = int(rng.integers(1, 4097))
            dt = int(rng.choice([1, 2, 4]))
            assert pmove_bytes(E, dm, dff, dt) == 2 * E * dm * dff * dt
            assert amove_bytes(B, S, dm, dt) == 2 * B * S * dm * dt


def test_2_model_size_cross_check():
    with report(2, "preset expert totals match published model sizes"):
        sl = preset_config("switch-large-128").model
        nllb = preset_config("nllb-moe").model
        assert abs(sl.total_expert_bytes - 51.5e9) / 51.5e9 < 0.01
        assert abs(nllb.total_expert_bytes - 103.1e9) / 103.1e9 < 0.01


def test_3_hot_expert_formula():
    with report(3, "hot-expert count formula and near-optimality"):
        assert compute_H(128, 32e9, 512e9, 1.0) == 8

        rng = np.random.default_rng(1)
        bw_ps = rng.uniform(8e9, 128e9, 10)
        bw_ms = rng.uniform(128e9, 2048e9, 10)
        alphas = rng.uniform(0.25, 4.0, 10)
        activ = int(rng.integers(16, 257))
        for bw_p in bw_ps:
            for bw_m in bw_ms:
                for a in alphas:
                    h = compute_H(activ, bw_p, bw_m, a)
                    assert compute_H(activ, 2 * bw_p, bw_m, a) >= h
                    assert compute_H(activ, bw_p, 2 * bw_m, a) <= h
                    assert compute_H(activ, bw_p, bw_m, 1.5 * a) >= h
                    assert 0 <= h <= activ

        cfg = preset_config("nllb-moe")
        for _ in range(100):
            n_act = int(rng.integers(8, 129))
            tokens = int(rng.integers(1, 5))
            hist = np.zeros(128, dtype=int)
            hist[:n_act] = tokens
            hw = cfg.hardware
            H = compute_H(n_act, hw.bw_pcie, hw.ndp_mem_bw, hw.alpha)

            def makespan(h):
                part = partition_experts(hist, h, 1)
                return analytic_workflow_times(part, cfg.model, cfg.batch,
                                               hw).makespan

            best = min(range(n_act + 1), key=makespan)
            assert abs(H - best) <= 1


def test_4_ndp_rate_matching():
    with report(4, "device compute time tracks weight streaming time"):
        rng = np.random.default_rng(2)
        core = NdpCoreConfig()
        for _ in range(50):
            K = 256 * int(rng.integers(2, 33))
            N = 256 * int(rng.integers(2, 33))
            stream = 2 * K * N * 2 / 512e9
            for T in range(1, 5):
                t = (ndp_gemm_latency(GemmShape(T, K, N), core, 512e9).seconds
                     + ndp_gemm_latency(GemmShape(T, N, K), core, 512e9).seconds)
                assert abs(t - stream) / stream < 0.01


def test_5_single_token_transfer_bottleneck():
    with report(5, "weight transfer dominates 1-token expert compute"):
        cfg = preset_config("nllb-moe")
        hw = cfg.hardware
        for d_model in (768, 1024, 2048):
            d_ff = 4 * d_model
            model = ModelConfig(num_experts=128, d_model=d_model, d_ff=d_ff,
                                num_layers=1, moe_layer_indices=(0,), top_k=1)
            xfer = transfer_time(model.expert_bytes, hw.bw_pcie)
            compute = gpu_expert_time(1, model, hw)
            assert xfer / compute >= 10


def _throughputs(preset, mode, seed, strategies):
    cfg = preset_config(preset)
    batch = cfg.batch if mode == "encoder" else BatchConfig(
        B=cfg.batch.B, S=cfg.batch.S, mode="decoder", decode_steps=16)
    trace = synth_routing(cfg.model, batch, 1.2, seed=seed)
    return {s: simulate_model(s, trace, cfg.model, batch,
                              cfg.hardware).tokens_per_s for s in strategies}


# Published end-to-end speedup ratios (device-side over GPU-fetch strategy)
# for the two presets; the simulator must land within a 0.3x-3x band.
_PUBLISHED_RATIOS = {
    ("switch-large-128", "encoder"): 3.1,
    ("nllb-moe", "encoder"): 6.7,
    ("switch-large-128", "decoder"): 1.1,
    ("nllb-moe", "decoder"): 1.9,
}


def test_6_strategy_ordering_and_bands():
    with report(6, "strategy ordering and speedup bands"):
        achieved = {}
        for preset in ("switch-large-128", "nllb-moe"):
            enc_ratios, dec_ratios = [], []
            for seed in range(20):
                enc = _throughputs(preset, "encoder", seed,
                                   [Strategy.GPU_PM, Strategy.MD_AM,
                                    Strategy.MD_LB])
                assert enc[Strategy.MD_LB] >= enc[Strategy.MD_AM] * (1 - 1e-9)
                assert enc[Strategy.MD_AM] > enc[Strategy.GPU_PM]
                assert enc[Strategy.MD_LB] >= 0.95 * max(enc[Strategy.MD_AM],
                                                         enc[Strategy.GPU_PM])
                enc_ratios.append(enc[Strategy.MD_LB] / enc[Strategy.GPU_PM])

                dec = _throughputs(preset, "decoder", seed,
                                   [Strategy.GPU_PM, Strategy.MD_LB])
                assert dec[Strategy.MD_LB] >= dec[Strategy.GPU_PM] * (1 - 1e-9)
                dec_ratios.append(dec[Strategy.MD_LB] / dec[Strategy.GPU_PM])
            achieved[(preset, "encoder")] = float(np.mean(enc_ratios))
            achieved[(preset, "decoder")] = float(np.mean(dec_ratios))
        for key, published in _PUBLISHED_RATIOS.items():
            ratio = achieved[key]
            print(f"  {key[0]} {key[1]}: achieved {ratio:.2f}x "
                  f"(published {published}x, band "
                  f"[{0.3 * published:.2f}, {3 * published:.2f}])")
            assert 0.3 * published <= ratio <= 3 * published


def test_7_bandwidth_sensitivity_trend():
    with report(7, "device-bandwidth sweep trend"):
        cfg = preset_config("nllb-moe")
        trace = synth_routing(cfg.model, cfg.batch, 1.2, seed=0)
        am_speedups, lb_speedups = [], []
        for scale in (0.5, 1.0, 2.0):
            hw = replace(cfg.hardware, ndp_mem_bw=cfg.hardware.ndp_mem_bw * scale,
                         ndp=replace(cfg.hardware.ndp,
                                     clock_hz=cfg.hardware.ndp.clock_hz * scale))
            tput = {s: simulate_model(s, trace, cfg.model, cfg.batch,
                                      hw).tokens_per_s
                    for s in (Strategy.GPU_PM, Strategy.MD_AM, Strategy.MD_LB)}
            am_speedups.append(tput[Strategy.MD_AM] / tput[Strategy.GPU_PM])
            lb_speedups.append(tput[Strategy.MD_LB] / tput[Strategy.GPU_PM])
        assert am_speedups[0] < am_speedups[1] < am_speedups[2]
        assert lb_speedups[0] < lb_speedups[1] < lb_speedups[2]
        gaps = [lb - am for lb, am in zip(lb_speedups, am_speedups)]
        assert gaps[0] > gaps[1] > gaps[2]


def test_8_multi_device_scaling():
    with report(8, "multi-device scaling behavior"):
        cfg = preset_config("nllb-moe")
        trace = synth_routing(cfg.model, cfg.batch, 1.2, seed=3)
        enc = []
        for n in (1, 2, 4):
            hw = replace(cfg.hardware, num_ndp_devices=n)
            enc.append(simulate_model(Strategy.MD_LB, trace, cfg.model,
                                      cfg.batch, hw).latency_s)
        assert enc[0] >= enc[1] >= enc[2]

        for B in (1, 4, 16):
            batch = BatchConfig(B=B, S=512, mode="decoder", decode_steps=16)
            dtrace = synth_routing(cfg.model, batch, 1.2, seed=3)
            lat = []
            for n in (1, 2, 4):
                hw = replace(cfg.hardware, num_ndp_devices=n)
                lat.append(simulate_model(Strategy.MD_LB, dtrace, cfg.model,
                                          batch, hw).latency_s)
            assert (max(lat) - min(lat)) / min(lat) < 0.10


def test_9_codec_and_address_map():
    with report(9, "instruction codec and bank mapping"):
        rng = np.random.default_rng(4)
        for _ in range(10_000):
            inst = NdpInstruction(
                opcode=Opcode(int(rng.choice([1, 2]))),
                in_act=Operand(int(rng.integers(0, 2**64, dtype=np.uint64)),
                               1 + int(rng.integers(0, 2**64 - 1, dtype=np.uint64))),
                weights=Operand(int(rng.integers(0, 2**64, dtype=np.uint64)),
                                1 + int(rng.integers(0, 2**64 - 1, dtype=np.uint64))),
                out_act=Operand(int(rng.integers(0, 2**64, dtype=np.uint64)),
                                1 + int(rng.integers(0, 2**64 - 1, dtype=np.uint64))),
                flags=int(rng.integers(0, 256)) | 0x01,
            )
            assert decode_instruction(encode_instruction(inst)) == inst
        assert isinstance(decode_instruction(bytes(64)), PlainMemoryTraffic)
        bad = bytearray(64)
        bad[0], bad[1] = 0x0F, 0x01
        with pytest.raises(CodecError):
            decode_instruction(bytes(bad))
        with pytest.raises(CodecError):
            decode_instruction(bytes(63))

        offsets = rng.integers(0, 2**32, size=10_000)
        for region, parity in (("param", 0), ("activation", 1)):
            seen = set()
            for off in offsets:
                c = map_address(region, int(off))
                assert c.ba % 2 == parity
                seen.add((c.ro, c.ba, c.bg, c.ra, c.co, c.ch))
            assert len(seen) == len(set(offsets.tolist()))


def test_10_run_determinism(tmp_path):
    with report(10, "repeated runs are byte-identical"):
        args = ["run", "--preset", "nllb-moe", "--seed", "7",
                "--strategy", "md-lb", "--strategy", "gpu-pm"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli_main(args + ["--out", str(a)]) == 0
        assert cli_main(args + ["--out", str(b)]) == 0
        for name in ("md-lb", "gpu-pm"):
            fa = (a / f"{name}.csv").read_bytes()
            fb = (b / f"{name}.csv").read_bytes()
            assert fa == fb
            with open(a / f"{name}.csv", newline="") as f:
                assert list(csv.DictReader(f))  # non-empty, parseable
