"""Independent references for checking the layers.

``brute_force_moe`` uses plain Python loops over tokens, experts and
features, never a matrix product, so it shares no code path with the
vectorised layers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .expert_bank import Activation, ExpertBank, Placement
from .gating import GateDecision
from .meo_layer import apply_merged
from .moe_layer import mix_expert_outputs

__all__ = [
    "EquivalenceReport",
    "NonFiniteLossError",
    "brute_force_moe",
    "config_digest",
    "equivalence_gap",
    "finite_diff_grad",
    "max_relative_error",
]


def _scalar_activation(v: float, kind: Activation) -> float:
    if kind is Activation.IDENTITY:
        return v
    if kind is Activation.RELU:
        return v if v > 0.0 else 0.0
    if kind is Activation.TANH:
        return math.tanh(v)
    return 0.5 * v * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (v + 0.044715 * v**3)))


def brute_force_moe(x, bank: ExpertBank, decision: GateDecision, placement: Placement) -> np.ndarray:
    placement = Placement(placement)
    xs = np.asarray(x, dtype=np.float64).tolist()
    W = bank.weights.tolist()
    B = bank.biases.tolist()
    s = len(xs)
    d_in, d_out = bank.d_in, bank.d_out
    out = [[0.0] * d_out for _ in range(s)]
    for i in range(s):
        g = 0 if decision.groups == 1 else i
        for o in range(d_out):
            total = 0.0
            for k, score in zip(decision.indices[g].tolist(), decision.scores[g].tolist()):
                z = B[k][o]
                for c in range(d_in):
                    z += xs[i][c] * W[k][c][o]
                if placement is Placement.INSIDE:
                    z = _scalar_activation(z, bank.activation)
                total += score * z
            if placement is Placement.OUTSIDE:
                total = _scalar_activation(total, bank.activation)
            out[i][o] = total
    return np.array(out)


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_gap: float
    mean_abs_gap: float
    config_digest: str


def config_digest(x, bank: ExpertBank, decision: GateDecision, placement: Placement) -> str:
    h = hashlib.sha256()
    for arr in (np.asarray(x, np.float64), bank.weights, bank.biases, decision.indices, decision.scores):
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(f"{Activation(bank.activation).value}/{Placement(placement).value}".encode())
    return h.hexdigest()[:16]


def equivalence_gap(x, bank: ExpertBank, decision: GateDecision, placement: Placement) -> EquivalenceReport:
    """Elementwise |merged - mixed| for one routing decision and placement."""
    merged, _ = apply_merged(x, bank, decision)
    mixed, _ = mix_expert_outputs(x, bank, decision, placement)
    gap = np.abs(merged - mixed)
    return EquivalenceReport(float(gap.max()), float(gap.mean()), config_digest(x, bank, decision, placement))


class NonFiniteLossError(ArithmeticError):
    pass


def finite_diff_grad(loss_fn: Callable[[], float], params: dict[str, np.ndarray],
                     eps: float = 1e-6) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn()`` with respect to every entry of ``params``.

    Arrays are perturbed in place and restored; ``loss_fn`` must read them
    through whatever object owns them.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    grads = {}
    for name, arr in params.items():
        g = np.zeros(arr.shape)
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"parameter {name!r} must be contiguous to perturb in place")
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NonFiniteLossError(f"non-finite loss while perturbing {name}[{i}]")
            g.reshape(-1)[i] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(a, b, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor) over all coordinates."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0
