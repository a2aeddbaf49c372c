"""Closed-form FLOPs accounting for vanilla, MoE and MEO transformer stacks.

Convention: only matrix products are counted and one multiply-accumulate is
2 FLOPs. Softmax, layer norm, activations and residual adds are ignored.
Every function returns a whole-model count (summed over layers) as an int.
Experts are modelled as the fused two-matrix feed-forward block
``d -> d_ff -> d`` they replace.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from enum import Enum

from .gating import ConfigurationError, GateLevel

__all__ = [
    "BERT_BASE",
    "BERT_LARGE",
    "BERT_SMALL",
    "CostReport",
    "ModelProfile",
    "Variant",
    "backbone_flops",
    "expert_forward_flops",
    "overhead_flops",
    "total_flops",
]


class Variant(str, Enum):
    VANILLA = "Vanilla"
    MOE = "MoE"
    MEO = "MEO"
    MEO_TOKEN = "MEO_Token"


@dataclass(frozen=True)
class ModelProfile:
    layers: int
    d_model: int
    d_ff: int
    seq_len: int
    vocab: int
    n_experts: int = 1
    m_selected: int = 1
    level: GateLevel = GateLevel.SEQUENCE
    variant: Variant = Variant.MOE
    r: int = 64

    def __post_init__(self):
        object.__setattr__(self, "level", GateLevel(self.level))
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.m_selected > self.n_experts:
            raise ConfigurationError(f"m_selected={self.m_selected} exceeds n_experts={self.n_experts}")
        if self.seq_len < 1:
            raise ConfigurationError(f"seq_len must be >= 1, got {self.seq_len}")
        for f in ("layers", "d_model", "d_ff", "vocab", "n_experts", "m_selected"):
            if getattr(self, f) < 0:
                raise ConfigurationError(f"{f} must be nonnegative")
        if self.r < 1:
            raise ConfigurationError(f"r must be >= 1, got {self.r}")

    def with_(self, **changes) -> "ModelProfile":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level"] = self.level.value
        d["variant"] = self.variant.value
        return d


# GLUE-length (128 token) BERT stacks with the expert counts used in the experiments
BERT_SMALL = ModelProfile(layers=4, d_model=512, d_ff=2048, seq_len=128, vocab=30522, n_experts=32, m_selected=8)
BERT_BASE = ModelProfile(layers=12, d_model=768, d_ff=3072, seq_len=128, vocab=30522, n_experts=16, m_selected=4)
BERT_LARGE = ModelProfile(layers=24, d_model=1024, d_ff=4096, seq_len=128, vocab=30522, n_experts=8, m_selected=2)


@dataclass(frozen=True)
class CostReport:
    backbone_flops: int
    expert_forward_flops: int
    gating_flops: int
    merging_flops: int
    mixing_flops: int
    bottleneck_flops: int

    @property
    def total_flops(self) -> int:
        return sum(getattr(self, f.name) for f in fields(self))

    def as_dict(self) -> dict[str, int]:
        d = asdict(self)
        d["total_flops"] = self.total_flops
        return d


def backbone_flops(p: ModelProfile) -> int:
    """Attention projections and score/value products per layer, plus the vocabulary head."""
    s, d = p.seq_len, p.d_model
    per_layer = 4 * 2 * s * d * d + 2 * 2 * s * s * d
    return p.layers * per_layer + 2 * s * d * p.vocab


def expert_forward_flops(p: ModelProfile) -> int:
    """Cost of running one fused FFN expert in every layer."""
    return p.layers * 2 * 2 * p.seq_len * p.d_model * p.d_ff


def _gating_groups(p: ModelProfile) -> int:
    if p.variant is Variant.MEO_TOKEN:
        return 1  # token-level MEO still selects once per sequence
    return p.seq_len if p.level is GateLevel.TOKEN else 1


def overhead_flops(p: ModelProfile) -> tuple[int, int, int, int]:
    """``(gating, merging, mixing, bottleneck)`` FLOPs for the profile's variant."""
    if p.variant is Variant.VANILLA or p.m_selected == 0:
        return 0, 0, 0, 0
    s, d, f, m, L = p.seq_len, p.d_model, p.d_ff, p.m_selected, p.layers
    groups = _gating_groups(p)
    gating = L * groups * 2 * d * p.n_experts
    if p.variant is Variant.MOE:
        return gating, 0, L * m * 2 * s * d, 0
    merging = L * groups * m * 2 * (d * f + f * d + 2 * f)
    bottleneck = 0
    if p.variant is Variant.MEO_TOKEN:
        bottleneck = L * 2 * 2 * s * d * (d // p.r)
    return gating, merging, 0, bottleneck


def total_flops(p: ModelProfile) -> CostReport:
    gating, merging, mixing, bottleneck = overhead_flops(p)
    experts = p.m_selected if p.variant is Variant.MOE else 1
    return CostReport(
        backbone_flops=backbone_flops(p),
        expert_forward_flops=experts * expert_forward_flops(p),
        gating_flops=gating,
        merging_flops=merging,
        mixing_flops=mixing,
        bottleneck_flops=bottleneck,
    )
