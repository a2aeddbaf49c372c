"""Softmax gating with top-m expert selection at token, sequence or task level."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor_core import DimensionError, EmptyInputError, Rng, as_matrix, mean_rows, softmax_rows

__all__ = [
    "ConfigurationError",
    "GateDecision",
    "GateLevel",
    "GateParams",
    "Routing",
    "gate_scores",
    "init_gate",
    "pool_input",
    "route",
    "route_backward",
    "select_top_m",
]


class ConfigurationError(ValueError):
    """Raised for layer or routing settings that cannot be satisfied."""


class GateLevel(str, Enum):
    TOKEN = "token"
    SEQUENCE = "sequence"
    TASK = "task"


@dataclass
class GateParams:
    """Linear gate ``d -> n`` plus optional per-task embeddings (``num_tasks x d``)."""

    w_gate: np.ndarray
    task_embeddings: np.ndarray | None = None

    def __post_init__(self):
        self.w_gate = as_matrix(self.w_gate)
        if self.task_embeddings is not None:
            self.task_embeddings = as_matrix(self.task_embeddings)
            if self.task_embeddings.shape[1] != self.w_gate.shape[0]:
                raise DimensionError(
                    f"task embeddings {self.task_embeddings.shape} do not match gate input width "
                    f"{self.w_gate.shape[0]}"
                )

    @property
    def d(self) -> int:
        return self.w_gate.shape[0]

    @property
    def n_experts(self) -> int:
        return self.w_gate.shape[1]

    @property
    def num_tasks(self) -> int:
        return 0 if self.task_embeddings is None else self.task_embeddings.shape[0]


@dataclass(frozen=True)
class GateDecision:
    """Selected expert ids and their scores, one row per gating group.

    A decision with one group is shared by every token of the sequence; a
    decision with ``s`` groups routes each token separately.
    """

    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        scores = np.asarray(self.scores)
        if indices.ndim != 2 or indices.shape != scores.shape:
            raise DimensionError(f"indices {indices.shape} and scores {scores.shape} must be equal 2-D shapes")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "scores", scores)

    @property
    def groups(self) -> int:
        return self.indices.shape[0]

    @property
    def m(self) -> int:
        return self.indices.shape[1]

    def validate(self, n_experts: int) -> None:
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n_experts):
            raise ConfigurationError(f"expert index outside [0, {n_experts})")
        for row in self.indices:
            if len(set(row.tolist())) != len(row):
                raise ConfigurationError(f"duplicate expert ids in group {row.tolist()}")

    def group_of_rows(self, rows: int) -> np.ndarray:
        """Map each token row to the gating group that routes it."""
        if self.groups == 1:
            return np.zeros(rows, dtype=np.int64)
        if self.groups == rows:
            return np.arange(rows)
        raise DimensionError(f"decision with {self.groups} groups cannot route {rows} rows")


def init_gate(d: int, n: int, seed: int, num_tasks: int = 0) -> GateParams:
    rng = Rng(seed)
    a = np.sqrt(6.0 / (d + n))
    w_gate = rng.uniform(-a, a, (d, n))
    task_embeddings = rng.normal((num_tasks, d)) if num_tasks else None
    return GateParams(w_gate, task_embeddings)


def pool_input(x, level: GateLevel, gate: GateParams, task_id: int | None = None) -> np.ndarray:
    """Return the gate input: ``x`` itself, its row mean, or a task embedding row."""
    level = GateLevel(level)
    if level is GateLevel.TASK:
        if task_id is None:
            raise ConfigurationError("task-level gating needs a task_id")
        if gate.task_embeddings is None or not 0 <= task_id < gate.num_tasks:
            raise ConfigurationError(f"task_id {task_id} out of range for {gate.num_tasks} tasks")
        return gate.task_embeddings[task_id : task_id + 1]
    x = as_matrix(x)
    if x.shape[0] == 0:
        raise EmptyInputError(f"{level.value}-level gating needs a nonempty input")
    if level is GateLevel.TOKEN:
        return x
    return mean_rows(x)


def gate_scores(pooled, gate: GateParams) -> np.ndarray:
    pooled = as_matrix(pooled)
    if pooled.shape[1] != gate.d:
        raise DimensionError(f"pooled input {pooled.shape} does not match gate weights {gate.w_gate.shape}")
    return softmax_rows(pooled @ gate.w_gate.astype(pooled.dtype, copy=False))


def select_top_m(scores, m: int, renormalize: bool = True) -> GateDecision:
    """Pick the ``m`` largest scores per row.

    Ties go to the lower expert index; indices come out in descending-score
    order.
    """
    scores = as_matrix(scores)
    n = scores.shape[1]
    if not 1 <= m <= n:
        raise ConfigurationError(f"cannot select m={m} experts from n={n}")
    order = np.argsort(-scores, axis=1, kind="stable")[:, :m]
    chosen = np.take_along_axis(scores, order, axis=1)
    if renormalize:
        chosen = chosen / chosen.sum(axis=1, keepdims=True)
    return GateDecision(order, chosen)


@dataclass
class Routing:
    """Everything the backward pass needs from one gating call."""

    level: GateLevel
    pooled: np.ndarray
    probs: np.ndarray
    decision: GateDecision
    renormalize: bool
    task_id: int | None
    rows: int


def route(x, gate: GateParams, level: GateLevel, m: int, renormalize: bool = True,
          task_id: int | None = None) -> Routing:
    """Pool, score and select.

    With renormalisation the kept scores are a softmax over the selected
    logits alone; this equals rescaling the top-m probabilities but leaves
    the result exactly independent of the unselected logits.
    """
    level = GateLevel(level)
    pooled = pool_input(x, level, gate, task_id)
    if pooled.shape[1] != gate.d:
        raise DimensionError(f"pooled input {pooled.shape} does not match gate weights {gate.w_gate.shape}")
    logits = pooled @ gate.w_gate.astype(pooled.dtype, copy=False)
    probs = softmax_rows(logits)
    decision = select_top_m(probs, m, renormalize=False)
    if renormalize:
        decision = GateDecision(decision.indices,
                                softmax_rows(np.take_along_axis(logits, decision.indices, axis=1)))
    rows = 0 if x is None else np.shape(x)[0]
    return Routing(level, pooled, probs, decision, renormalize, task_id, rows)


def route_backward(routing: Routing, gate: GateParams, d_scores: np.ndarray):
    """Backpropagate gradients of the selected scores into the gate.

    The top-m choice itself is held fixed. Returns ``(d_w_gate,
    d_task_embeddings, d_x)``; the last two are ``None`` when not applicable.
    """
    decision = routing.decision
    d_scores = np.asarray(d_scores, dtype=np.float64)
    p = routing.probs
    if routing.renormalize:
        g = decision.scores
        d_sel_logits = g * (d_scores - (d_scores * g).sum(axis=1, keepdims=True))
        d_logits = np.zeros_like(p, dtype=np.float64)
        np.put_along_axis(d_logits, decision.indices, d_sel_logits, axis=1)
    else:
        d_probs = np.zeros_like(p, dtype=np.float64)
        np.put_along_axis(d_probs, decision.indices, d_scores, axis=1)
        d_logits = p * (d_probs - (d_probs * p).sum(axis=1, keepdims=True))
    d_w_gate = routing.pooled.T @ d_logits
    d_pooled = d_logits @ gate.w_gate.T

    d_task = None
    d_x = None
    if routing.level is GateLevel.TASK:
        d_task = np.zeros_like(gate.task_embeddings)
        d_task[routing.task_id] = d_pooled[0]
    elif routing.level is GateLevel.SEQUENCE:
        d_x = np.repeat(d_pooled / routing.rows, routing.rows, axis=0)
    else:
        d_x = d_pooled
    return d_w_gate, d_task, d_x
