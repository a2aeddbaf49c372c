"""Synthetic classification run comparing MoE and MEO training curves.

Each sample is treated as its own length-1 sequence, so every sample gets
its own routing decision and (for MEO) its own merged expert. Both models
start from identical parameters and follow plain full-batch gradient
descent on softmax cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checks import random_gate
from .config import RunConfig, TrainSettings
from .expert_bank import init_bank
from .gating import GateLevel, route, route_backward
from .meo_layer import apply_merged, apply_merged_backward
from .moe_layer import mix_expert_outputs, mix_expert_outputs_backward
from .tensor_core import Rng, softmax_rows

__all__ = ["EpochRow", "ToyResult", "TrainingDiverged", "make_clusters", "run_train_toy", "train_model"]


class TrainingDiverged(ArithmeticError):
    def __init__(self, method: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"{method} loss became non-finite at epoch {epoch}")


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    method: str
    loss: float
    accuracy: float


@dataclass
class ToyResult:
    rows: list[EpochRow] = field(default_factory=list)

    def curve(self, method: str) -> tuple[np.ndarray, np.ndarray]:
        picked = [r for r in self.rows if r.method == method]
        return np.array([r.loss for r in picked]), np.array([r.accuracy for r in picked])

    def final_accuracy(self, method: str) -> float:
        return self.curve(method)[1][-1]


def make_clusters(settings: TrainSettings, seed: int):
    """Gaussian blobs, one per class, with means scaled by ``separation``."""
    rng = Rng(seed)
    means = rng.normal((settings.classes, settings.d_in), scale=settings.separation)
    labels = np.repeat(np.arange(settings.classes), settings.samples_per_class)
    x = means[labels] + rng.normal((labels.size, settings.d_in), scale=settings.spread)
    return x, labels


def _cross_entropy(logits: np.ndarray, labels: np.ndarray):
    probs = softmax_rows(logits)
    n = labels.size
    loss = -np.log(probs[np.arange(n), labels] + 1e-300).mean()
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n, probs.argmax(axis=1)


def train_model(method: str, x, labels, bank, gate, settings: TrainSettings, renormalize: bool = True):
    """Train one model in place and return its per-epoch rows.

    ``method`` is ``"moe"`` (output mixing with ``settings.placement``) or
    ``"meo"`` (parameter merging).
    """
    rows = []
    # overflow surfaces as a non-finite loss, which is checked explicitly
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(settings.epochs):
            routing = route(x, gate, GateLevel.TOKEN, settings.m, renormalize)
            if method == "moe":
                logits, cache = mix_expert_outputs(x, bank, routing.decision, settings.placement, keep=True)
            else:
                logits, cache = apply_merged(x, bank, routing.decision, keep=True)
            loss, d_logits, predicted = _cross_entropy(logits, labels)
            if not math.isfinite(loss):
                raise TrainingDiverged(method, epoch)
            rows.append(EpochRow(epoch, method, loss, float((predicted == labels).mean())))
            if method == "moe":
                d_w, d_b, d_scores, _ = mix_expert_outputs_backward(cache, bank, d_logits)
            else:
                d_w, d_b, d_scores, _ = apply_merged_backward(cache, bank, d_logits)
            d_gate, _, _ = route_backward(routing, gate, d_scores)
            bank.weights -= settings.lr * d_w
            bank.biases -= settings.lr * d_b
            gate.w_gate -= settings.lr * d_gate
    return rows


def run_train_toy(cfg: RunConfig) -> ToyResult:
    settings = cfg.train
    x, labels = make_clusters(settings, cfg.seed)
    result = ToyResult()
    for method in ("moe", "meo"):
        bank = init_bank(settings.n_experts, settings.d_in, settings.classes, settings.activation, cfg.seed + 1)
        gate = random_gate(settings.d_in, settings.n_experts, cfg.seed + 2, num_tasks=0)
        result.rows.extend(train_model(method, x, labels, bank, gate, settings, cfg.renormalize))
    return result
