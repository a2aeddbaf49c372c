"""Wall-clock comparison of MoE and MEO forwards across the number of selected experts.

Each method wraps a two-matrix feed-forward expert (``d -> d_ff -> d``) as
two stacked layers, each with its own sequence-level gate. Only forward
passes are timed; construction and warmup are excluded.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import astuple, dataclass, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .checks import random_bank
from .config import RunConfig
from .cost_model import ModelProfile, Variant, total_flops
from .expert_bank import Activation, ExpertBank, Placement
from .gating import GateLevel, GateParams, init_gate
from .meo_layer import MeoLayer, init_bottleneck, meo_forward, token_level_meo_forward
from .moe_layer import MoeLayer, moe_forward
from .tensor_core import Rng

__all__ = ["BENCH_HEADER", "BenchRow", "StackParts", "build_parts", "build_stack", "rows_to_csv", "run_bench", "time_forward"]

BENCH_HEADER = "method,level,m,n,d,d_ff,s,flops_model,wall_ms_median,wall_ms_p10,wall_ms_p90"


@dataclass(frozen=True)
class BenchRow:
    method: str
    level: str
    m: int
    n: int
    d: int
    d_ff: int
    s: int
    flops_model: int
    wall_ms_median: float
    wall_ms_p10: float
    wall_ms_p90: float


def _cast_gate(gate, dtype):
    gate.w_gate = gate.w_gate.astype(dtype)
    return gate


@dataclass
class StackParts:
    up_bank: ExpertBank
    down_bank: ExpertBank
    up_gate: GateParams
    down_gate: GateParams
    x: np.ndarray


def build_parts(profile: ModelProfile, cfg: RunConfig) -> StackParts:
    """Seeded banks, gates and input shared by every stack in one run."""
    dtype = np.float32 if cfg.precision == "f32" else np.float64
    d, f, n, seed = profile.d_model, profile.d_ff, profile.n_experts, cfg.seed
    return StackParts(
        up_bank=random_bank(n, d, f, cfg.activation, seed).astype(dtype),
        down_bank=random_bank(n, f, d, Activation.IDENTITY, seed + 10).astype(dtype),
        up_gate=_cast_gate(init_gate(d, n, seed + 20), dtype),
        down_gate=_cast_gate(init_gate(f, n, seed + 30), dtype),
        x=Rng(seed + 40).normal((profile.seq_len, d)).astype(dtype),
    )


def build_stack(method: str, profile: ModelProfile, m: int, cfg: RunConfig, parts: StackParts | None = None):
    """Return a zero-argument forward closure for one method at one ``m``."""
    parts = parts or build_parts(profile, cfg)
    d, f, level, seed = profile.d_model, profile.d_ff, profile.level, cfg.seed
    up_bank, down_bank, up_gate, down_gate, x = (parts.up_bank, parts.down_bank, parts.up_gate,
                                                 parts.down_gate, parts.x)

    if method == "MoE":
        up = MoeLayer(up_bank, up_gate, level, m, cfg.placement, cfg.renormalize)
        down = MoeLayer(down_bank, down_gate, level, m, Placement.OUTSIDE, cfg.renormalize)

        def forward():
            h, _ = moe_forward(up, x)
            return moe_forward(down, h)[0]
        return forward

    if level is GateLevel.TOKEN:
        up = MeoLayer(up_bank, up_gate, level, m, cfg.renormalize,
                      bottleneck=init_bottleneck(d, profile.r, seed=seed + 50))
        down = MeoLayer(down_bank, down_gate, level, m, cfg.renormalize,
                        bottleneck=init_bottleneck(f, profile.r, seed=seed + 60))

        def forward():
            h, _ = token_level_meo_forward(up, x)
            return token_level_meo_forward(down, h)[0]
        return forward

    up = MeoLayer(up_bank, up_gate, level, m, cfg.renormalize)
    down = MeoLayer(down_bank, down_gate, level, m, cfg.renormalize)

    def forward():
        h, _ = meo_forward(up, x)
        return meo_forward(down, h)[0]
    return forward


def time_forward(forward, repeats: int, warmup: int) -> np.ndarray:
    """Per-call wall times in milliseconds from a monotonic clock."""
    for _ in range(warmup):
        forward()
    times = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter_ns()
        forward()
        times[i] = (time.perf_counter_ns() - t0) / 1e6
    return times


def _model_flops(profile: ModelProfile, method: str, m: int) -> int:
    if method == "MoE":
        variant = Variant.MOE
    else:
        variant = Variant.MEO_TOKEN if profile.level is GateLevel.TOKEN else Variant.MEO
    p = profile.with_(layers=1, vocab=0, m_selected=m, variant=variant)
    report = total_flops(p)
    return report.total_flops - report.backbone_flops


def run_bench(cfg: RunConfig) -> list[BenchRow]:
    """Time every (method, m) stack, visiting them round-robin on each repeat.

    Interleaving spreads slow drifts in machine load evenly over all
    configurations instead of charging them to whichever ran last.
    """
    profile = cfg.profile
    parts = build_parts(profile, cfg)
    configs = [(method, m) for method in ("MoE", "MEO") for m in cfg.m_sweep]
    with threadpool_limits(limits=1):
        forwards = [build_stack(method, profile, m, cfg, parts) for method, m in configs]
        for forward in forwards:
            for _ in range(cfg.warmup):
                forward()
        times = np.empty((len(configs), cfg.repeats))
        for r in range(cfg.repeats):
            for i, forward in enumerate(forwards):
                t0 = time.perf_counter_ns()
                forward()
                times[i, r] = (time.perf_counter_ns() - t0) / 1e6
    rows = []
    for (method, m), t in zip(configs, times):
        p10, median, p90 = np.percentile(t, [10, 50, 90])
        rows.append(BenchRow(method, profile.level.value, m, profile.n_experts, profile.d_model,
                             profile.d_ff, profile.seq_len, _model_flops(profile, method, m),
                             float(median), float(p10), float(p90)))
    return rows


def rows_to_csv(rows, header=None) -> str:
    """Render dataclass rows as CSV text with ``\\n`` line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is None:
        header = [f.name for f in fields(rows[0])]
    elif isinstance(header, str):
        header = header.split(",")
    writer.writerow(header)
    for row in rows:
        writer.writerow(astuple(row) if not isinstance(row, (list, tuple)) else row)
    return buf.getvalue()
