"""Output-mixing Mixture-of-Experts layer with an exact backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expert_bank import Activation, ExpertBank, Placement, activate, activation_grad
from .gating import ConfigurationError, GateDecision, GateLevel, GateParams, Routing, route, route_backward
from .tensor_core import DimensionError, as_matrix

__all__ = [
    "Gradients",
    "MixCache",
    "MoeCache",
    "MoeLayer",
    "mix_expert_outputs",
    "mix_expert_outputs_backward",
    "moe_backward",
    "moe_forward",
    "moe_forward_with_cache",
]


@dataclass
class MoeLayer:
    bank: ExpertBank
    gate: GateParams
    level: GateLevel
    m: int
    placement: Placement = Placement.OUTSIDE
    renormalize: bool = True

    def __post_init__(self):
        self.level = GateLevel(self.level)
        self.placement = Placement(self.placement)
        if not 1 <= self.m <= self.bank.n:
            raise ConfigurationError(f"m={self.m} must lie in [1, {self.bank.n}]")
        if self.gate.n_experts != self.bank.n:
            raise ConfigurationError(f"gate scores {self.gate.n_experts} experts, bank holds {self.bank.n}")
        if self.gate.d != self.bank.d_in:
            raise DimensionError(f"gate input width {self.gate.d} != expert input width {self.bank.d_in}")


@dataclass
class Gradients:
    """Gradients for every trainable array a layer touches.

    Expert gradients cover the full bank; unselected experts stay zero.
    Optional entries are ``None`` when the layer has no such parameter.
    """

    weights: np.ndarray
    biases: np.ndarray
    w_gate: np.ndarray
    x: np.ndarray
    task_embeddings: np.ndarray | None = None
    w_down: np.ndarray | None = None
    w_up: np.ndarray | None = None

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in vars(self).items() if v is not None}


@dataclass
class _Term:
    k: int
    rows: object          # slice(None) when every row uses this expert
    coef: np.ndarray      # score per routed row, shape (r, 1)
    groups: np.ndarray    # (group, slot) pairs for score gradients
    slots: np.ndarray
    z: np.ndarray         # pre-activation of the routed rows


@dataclass
class MixCache:
    x: np.ndarray
    decision: GateDecision
    placement: Placement
    activation: Activation
    terms: list = field(default_factory=list)
    u: np.ndarray | None = None


def _terms(x: np.ndarray, bank: ExpertBank, decision: GateDecision):
    """Yield one expert term per distinct selected expert."""
    s = x.shape[0]
    scores = decision.scores.astype(x.dtype, copy=False)
    if decision.groups == 1:
        for j, k in enumerate(decision.indices[0]):
            coef = scores[0, j].reshape(1, 1)
            yield k, slice(None), coef, np.zeros(1, np.int64), np.array([j])
        return
    group = decision.group_of_rows(s)
    routed = decision.indices[group]
    for k in np.unique(decision.indices):
        hit = routed == k
        rows = np.flatnonzero(hit.any(axis=1))
        slots = hit[rows].argmax(axis=1)
        coef = scores[group[rows], slots][:, None]
        yield int(k), rows, coef, group[rows], slots


def mix_expert_outputs(x, bank: ExpertBank, decision: GateDecision, placement: Placement,
                       keep: bool = False):
    """Score-weighted sum of expert outputs for a fixed routing decision.

    Returns ``(y, cache)``; ``cache`` is ``None`` unless ``keep``.
    """
    x = as_matrix(x)
    if x.shape[1] != bank.d_in:
        raise DimensionError(f"input {x.shape} does not match expert input width {bank.d_in}")
    placement = Placement(placement)
    acc = np.zeros((x.shape[0], bank.d_out), dtype=x.dtype)
    cache = MixCache(x, decision, placement, bank.activation) if keep else None
    for k, rows, coef, groups, slots in _terms(x, bank, decision):
        z = x[rows] @ bank.weights[k] + bank.biases[k]
        if placement is Placement.INSIDE:
            acc[rows] += coef * activate(z, bank.activation)
        else:
            acc[rows] += coef * z
        if keep:
            cache.terms.append(_Term(k, rows, coef, groups, slots, z))
    if placement is Placement.INSIDE:
        return acc, cache
    if keep:
        cache.u = acc
    return activate(acc, bank.activation), cache


def mix_expert_outputs_backward(cache: MixCache, bank: ExpertBank, dy):
    """Return ``(d_weights, d_biases, d_scores, d_x)`` for :func:`mix_expert_outputs`."""
    x = cache.x
    dy = np.asarray(dy, dtype=x.dtype)
    d_weights = np.zeros_like(bank.weights)
    d_biases = np.zeros_like(bank.biases)
    d_scores = np.zeros(cache.decision.scores.shape)
    d_x = np.zeros_like(x)
    if cache.placement is Placement.OUTSIDE:
        du = dy * activation_grad(cache.u, cache.activation)
    for t in cache.terms:
        if cache.placement is Placement.INSIDE:
            g_rows = dy[t.rows]
            score_grad = (g_rows * activate(t.z, cache.activation)).sum(axis=1)
            dz = t.coef * g_rows * activation_grad(t.z, cache.activation)
        else:
            g_rows = du[t.rows]
            score_grad = (g_rows * t.z).sum(axis=1)
            dz = t.coef * g_rows
        if isinstance(t.rows, slice):
            d_scores[0, t.slots[0]] += score_grad.sum()
        else:
            np.add.at(d_scores, (t.groups, t.slots), score_grad)
        d_weights[t.k] += x[t.rows].T @ dz
        d_biases[t.k] += dz.sum(axis=0)
        d_x[t.rows] += dz @ bank.weights[t.k].T
    return d_weights, d_biases, d_scores, d_x


@dataclass
class MoeCache:
    routing: Routing
    mix: MixCache


def moe_forward_with_cache(layer: MoeLayer, x, task_id: int | None = None):
    x = as_matrix(x)
    routing = route(x, layer.gate, layer.level, layer.m, layer.renormalize, task_id)
    y, mix = mix_expert_outputs(x, layer.bank, routing.decision, layer.placement, keep=True)
    return y, routing.decision, MoeCache(routing, mix)


def moe_forward(layer: MoeLayer, x, task_id: int | None = None):
    """Run the selected experts and mix their outputs.

    Returns ``(y, decision)``. At sequence and task level every token shares
    one decision.
    """
    x = as_matrix(x)
    if x.shape[1] != layer.bank.d_in:
        raise DimensionError(f"input {x.shape} does not match expert input width {layer.bank.d_in}")
    routing = route(x, layer.gate, layer.level, layer.m, layer.renormalize, task_id)
    y, _ = mix_expert_outputs(x, layer.bank, routing.decision, layer.placement)
    return y, routing.decision


def moe_backward(layer: MoeLayer, x, upstream_grad, task_id: int | None = None,
                 cache: MoeCache | None = None) -> Gradients:
    """Reverse-mode gradients of :func:`moe_forward`.

    Scores receive true softmax gradients; the top-m choice is held fixed.
    Without ``cache`` the forward pass is recomputed.
    """
    x = as_matrix(x)
    if cache is None:
        _, _, cache = moe_forward_with_cache(layer, x, task_id)
    elif cache.mix.x.shape != x.shape:
        raise DimensionError(f"cache was built for input {cache.mix.x.shape}, got {x.shape}")
    dy = as_matrix(upstream_grad)
    if dy.shape != (x.shape[0], layer.bank.d_out):
        raise DimensionError(f"upstream gradient {dy.shape} does not match output {(x.shape[0], layer.bank.d_out)}")
    d_weights, d_biases, d_scores, d_x = mix_expert_outputs_backward(cache.mix, layer.bank, dy)
    d_w_gate, d_task, d_x_gate = route_backward(cache.routing, layer.gate, d_scores)
    if d_x_gate is not None:
        d_x = d_x + d_x_gate
    return Gradients(d_weights, d_biases, d_w_gate, d_x, task_embeddings=d_task)
