"""Merged-expert layers: mix expert parameters, then run a single affine map.

At sequence and task level one merged expert serves the whole sequence. The
token-level variant first passes tokens through a residual bottleneck block,
then selects experts once per sequence from the updated input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import get_blas_funcs

from .expert_bank import Activation, ExpertBank, activate, activation_grad
from .gating import ConfigurationError, GateDecision, GateLevel, GateParams, Routing, route, route_backward
from .moe_layer import Gradients, _terms
from .tensor_core import DimensionError, Rng, as_matrix

__all__ = [
    "BottleneckBlock",
    "MeoCache",
    "MeoLayer",
    "MergedExpert",
    "apply_merged",
    "apply_merged_backward",
    "init_bottleneck",
    "merge_experts",
    "meo_backward",
    "meo_forward",
    "meo_forward_with_cache",
    "token_attention",
    "token_level_meo_forward",
]


@dataclass
class MergedExpert:
    w_hat: np.ndarray
    b_hat: np.ndarray


@dataclass
class BottleneckBlock:
    """Residual map ``x + f(x @ w_down) @ w_up`` with ``w_down: d x d/r``."""

    w_down: np.ndarray
    w_up: np.ndarray
    f: Activation = Activation.GELU

    def __post_init__(self):
        self.w_down = as_matrix(self.w_down)
        self.w_up = as_matrix(self.w_up)
        self.f = Activation(self.f)
        d, hidden = self.w_down.shape
        if self.w_up.shape != (hidden, d):
            raise DimensionError(f"w_up {self.w_up.shape} must be {(hidden, d)} to match w_down {self.w_down.shape}")
        if d % hidden:
            raise DimensionError(f"bottleneck width {hidden} does not divide d={d}")

    @property
    def d(self) -> int:
        return self.w_down.shape[0]

    @property
    def r(self) -> int:
        return self.d // self.w_down.shape[1]


def init_bottleneck(d: int, r: int = 64, f: Activation = Activation.GELU, seed: int = 0) -> BottleneckBlock:
    """Random down-projection and zero up-projection, so the block starts as the identity."""
    if d % r:
        raise DimensionError(f"reduce factor r={r} must divide d={d}")
    hidden = d // r
    a = np.sqrt(6.0 / (d + hidden))
    w_down = Rng(seed).uniform(-a, a, (d, hidden))
    return BottleneckBlock(w_down, np.zeros((hidden, d)), f)


@dataclass
class MeoLayer:
    bank: ExpertBank
    gate: GateParams
    level: GateLevel
    m: int
    renormalize: bool = True
    bottleneck: BottleneckBlock | None = None

    def __post_init__(self):
        self.level = GateLevel(self.level)
        if not 1 <= self.m <= self.bank.n:
            raise ConfigurationError(f"m={self.m} must lie in [1, {self.bank.n}]")
        if self.gate.n_experts != self.bank.n:
            raise ConfigurationError(f"gate scores {self.gate.n_experts} experts, bank holds {self.bank.n}")
        if self.gate.d != self.bank.d_in:
            raise DimensionError(f"gate input width {self.gate.d} != expert input width {self.bank.d_in}")
        if self.level is GateLevel.TOKEN:
            if self.bottleneck is None:
                raise ConfigurationError("token-level MEO needs a bottleneck block")
            if self.bottleneck.d != self.bank.d_in:
                raise DimensionError(f"bottleneck width {self.bottleneck.d} != expert input width {self.bank.d_in}")


def _axpy(dtype):
    return get_blas_funcs("axpy", dtype=dtype)


def merge_experts(bank: ExpertBank, decision: GateDecision, group: int = 0) -> MergedExpert:
    """Score-weighted sum of the selected experts' weights and biases.

    Terms are accumulated in ascending expert index, so the result does not
    depend on the order the gate listed them in.
    """
    if not 0 <= group < decision.groups:
        raise IndexError(f"group {group} out of range for a decision with {decision.groups} groups")
    order = np.argsort(decision.indices[group], kind="stable")
    ks = decision.indices[group][order]
    gs = decision.scores[group][order].astype(bank.weights.dtype)
    w_hat = bank.weights[ks[0]] * gs[0]
    b_hat = bank.biases[ks[0]] * gs[0]
    axpy = _axpy(bank.weights.dtype)
    for k, g in zip(ks[1:], gs[1:]):
        axpy(bank.weights[k].ravel(), w_hat.ravel(), a=g)
        axpy(bank.biases[k], b_hat, a=g)
    return MergedExpert(w_hat, b_hat)


@dataclass
class _MergedCache:
    x: np.ndarray
    decision: GateDecision
    activation: Activation
    u: np.ndarray
    merged: MergedExpert | None = None
    w_rows: np.ndarray | None = None


def apply_merged(x, bank: ExpertBank, decision: GateDecision, keep: bool = False):
    """``activate(x @ W_hat + b_hat)`` for a fixed routing decision.

    A one-group decision merges once for every row; an ``s``-group decision
    merges a separate expert per row. Returns ``(y, cache)``.
    """
    x = as_matrix(x)
    if x.shape[1] != bank.d_in:
        raise DimensionError(f"input {x.shape} does not match expert input width {bank.d_in}")
    merged = w_rows = None
    if decision.groups == 1:
        merged = merge_experts(bank, decision, 0)
        u = x @ merged.w_hat + merged.b_hat
    else:
        group = decision.group_of_rows(x.shape[0])
        idx = decision.indices[group]
        g = decision.scores[group].astype(x.dtype, copy=False)
        order = np.argsort(idx, axis=1, kind="stable")
        idx = np.take_along_axis(idx, order, axis=1)
        g = np.take_along_axis(g, order, axis=1)
        w_rows = np.einsum("rm,rmio->rio", g, bank.weights[idx])
        b_rows = np.einsum("rm,rmo->ro", g, bank.biases[idx])
        u = np.einsum("ri,rio->ro", x, w_rows) + b_rows
    cache = _MergedCache(x, decision, bank.activation, u, merged, w_rows) if keep else None
    return activate(u, bank.activation), cache


def apply_merged_backward(cache: _MergedCache, bank: ExpertBank, dy):
    """Return ``(d_weights, d_biases, d_scores, d_x)`` for :func:`apply_merged`."""
    x = cache.x
    du = np.asarray(dy, dtype=x.dtype) * activation_grad(cache.u, cache.activation)
    d_weights = np.zeros_like(bank.weights)
    d_biases = np.zeros_like(bank.biases)
    d_scores = np.zeros(cache.decision.scores.shape)
    if cache.merged is not None:
        d_w_hat = x.T @ du
        d_b_hat = du.sum(axis=0)
        d_x = du @ cache.merged.w_hat.T
        for j, k in enumerate(cache.decision.indices[0]):
            g = cache.decision.scores[0, j]
            d_weights[k] += g * d_w_hat
            d_biases[k] += g * d_b_hat
            d_scores[0, j] = np.vdot(bank.weights[k], d_w_hat) + np.vdot(bank.biases[k], d_b_hat)
        return d_weights, d_biases, d_scores, d_x
    d_x = np.einsum("rio,ro->ri", cache.w_rows, du)
    for k, rows, coef, groups, slots in _terms(x, bank, cache.decision):
        du_rows = du[rows]
        d_weights[k] += x[rows].T @ (coef * du_rows)
        d_biases[k] += (coef * du_rows).sum(axis=0)
        z = x[rows] @ bank.weights[k] + bank.biases[k]
        np.add.at(d_scores, (groups, slots), (z * du_rows).sum(axis=1))
    return d_weights, d_biases, d_scores, d_x


def token_attention(x, block: BottleneckBlock) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] != block.d:
        raise DimensionError(f"input {x.shape} does not match bottleneck width {block.d}")
    w_down = block.w_down.astype(x.dtype, copy=False)
    w_up = block.w_up.astype(x.dtype, copy=False)
    return x + activate(x @ w_down, block.f) @ w_up


@dataclass
class MeoCache:
    routing: Routing
    merged: _MergedCache
    x: np.ndarray
    h: np.ndarray | None = None  # bottleneck pre-activation, token level only


def meo_forward_with_cache(layer: MeoLayer, x, task_id: int | None = None):
    x = as_matrix(x)
    if layer.level is GateLevel.TOKEN:
        block = layer.bottleneck
        h = x @ block.w_down
        x_in = x + activate(h, block.f) @ block.w_up
        routing = route(x_in, layer.gate, GateLevel.SEQUENCE, layer.m, layer.renormalize)
    else:
        h = None
        x_in = x
        routing = route(x, layer.gate, layer.level, layer.m, layer.renormalize, task_id)
    y, merged = apply_merged(x_in, layer.bank, routing.decision, keep=True)
    return y, routing.decision, MeoCache(routing, merged, x, h)


def meo_forward(layer: MeoLayer, x, task_id: int | None = None):
    """Merge the selected experts once per sequence and apply the result.

    Returns ``(y, decision)``. Token-level layers go through
    :func:`token_level_meo_forward` instead.
    """
    if layer.level is GateLevel.TOKEN:
        raise ConfigurationError("token-level MEO layers run through token_level_meo_forward")
    x = as_matrix(x)
    if x.shape[1] != layer.bank.d_in:
        raise DimensionError(f"input {x.shape} does not match expert input width {layer.bank.d_in}")
    routing = route(x, layer.gate, layer.level, layer.m, layer.renormalize, task_id)
    y, _ = apply_merged(x, layer.bank, routing.decision)
    return y, routing.decision


def token_level_meo_forward(layer: MeoLayer, x):
    if layer.level is not GateLevel.TOKEN or layer.bottleneck is None:
        raise ConfigurationError("token_level_meo_forward needs a token-level layer with a bottleneck block")
    x_in = token_attention(x, layer.bottleneck)
    routing = route(x_in, layer.gate, GateLevel.SEQUENCE, layer.m, layer.renormalize)
    y, _ = apply_merged(x_in, layer.bank, routing.decision)
    return y, routing.decision


def meo_backward(layer: MeoLayer, x, upstream_grad, task_id: int | None = None,
                 cache: MeoCache | None = None) -> Gradients:
    """Reverse-mode gradients of MEO at any level.

    Score gradients flow through the merge as inner products of each expert
    with the merged-parameter gradient; the top-m choice is held fixed.
    Without ``cache`` the forward pass is recomputed.
    """
    x = as_matrix(x)
    if cache is None:
        _, _, cache = meo_forward_with_cache(layer, x, task_id)
    elif cache.x.shape != x.shape:
        raise DimensionError(f"cache was built for input {cache.x.shape}, got {x.shape}")
    dy = as_matrix(upstream_grad)
    if dy.shape != (x.shape[0], layer.bank.d_out):
        raise DimensionError(f"upstream gradient {dy.shape} does not match output {(x.shape[0], layer.bank.d_out)}")
    d_weights, d_biases, d_scores, d_x_in = apply_merged_backward(cache.merged, layer.bank, dy)
    d_w_gate, d_task, d_x_gate = route_backward(cache.routing, layer.gate, d_scores)
    if d_x_gate is not None:
        d_x_in = d_x_in + d_x_gate
    grads = Gradients(d_weights, d_biases, d_w_gate, d_x_in, task_embeddings=d_task)
    if layer.level is GateLevel.TOKEN:
        block = layer.bottleneck
        a = activate(cache.h, block.f)
        grads.w_up = a.T @ d_x_in
        dh = (d_x_in @ block.w_up.T) * activation_grad(cache.h, block.f)
        grads.w_down = x.T @ dh
        grads.x = d_x_in + dh @ block.w_down.T
    return grads
