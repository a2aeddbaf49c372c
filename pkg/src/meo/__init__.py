"""Mixture-of-Experts layers and their merged-parameter (MEO) reformulation."""

from .cost_model import ModelProfile, Variant, total_flops
from .expert_bank import Activation, ExpertBank, Placement, expert_forward, init_bank
from .gating import GateDecision, GateLevel, GateParams, init_gate, select_top_m
from .meo_layer import (BottleneckBlock, MeoLayer, init_bottleneck, merge_experts, meo_backward,
                        meo_forward, token_attention, token_level_meo_forward)
from .moe_layer import MoeLayer, moe_backward, moe_forward

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "BottleneckBlock",
    "ExpertBank",
    "GateDecision",
    "GateLevel",
    "GateParams",
    "MeoLayer",
    "ModelProfile",
    "MoeLayer",
    "Placement",
    "Variant",
    "expert_forward",
    "init_bank",
    "init_bottleneck",
    "init_gate",
    "merge_experts",
    "meo_backward",
    "meo_forward",
    "moe_backward",
    "moe_forward",
    "select_top_m",
    "token_attention",
    "token_level_meo_forward",
    "total_flops",
]
