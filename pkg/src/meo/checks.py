"""Seeded fixtures and the equivalence / gradient-check suites.

These are shared by the test-suite and the ``equiv`` / ``gradcheck`` CLI
modes so both exercise exactly the same configurations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .expert_bank import Activation, ExpertBank, Placement, init_bank
from .gating import GateLevel, GateParams, init_gate, route
from .meo_layer import (BottleneckBlock, MeoLayer, meo_backward, meo_forward,
                        token_level_meo_forward, token_attention)
from .moe_layer import MoeLayer, mix_expert_outputs, moe_backward, moe_forward
from .oracle import equivalence_gap, finite_diff_grad, max_relative_error
from .tensor_core import Rng

__all__ = [
    "EQUIVALENCE_TOL",
    "GRADCHECK_TOL",
    "WITNESS",
    "EquivCase",
    "GradcheckRow",
    "equivalence_cases",
    "random_bank",
    "random_gate",
    "run_equivalence_case",
    "run_gradcheck",
    "run_witness",
    "small_fixture",
]

EQUIVALENCE_TOL = 1e-10
GRADCHECK_TOL = 1e-5
WITNESS_MIN_GAP = 1e-3

LEVELS = (GateLevel.TOKEN, GateLevel.SEQUENCE, GateLevel.TASK)
ACTIVATIONS = tuple(Activation)
SEQ_LENS = (1, 7, 128)
EXPERT_SHAPES = ((1, 1), (4, 1), (4, 2), (4, 4), (16, 1), (16, 2), (16, 4))
NUM_TASKS = 3


def random_bank(n: int, d_in: int, d_out: int, activation: Activation, seed: int) -> ExpertBank:
    """Bank with nonzero biases, unlike :func:`init_bank`, so bias paths are exercised."""
    bank = init_bank(n, d_in, d_out, activation, seed)
    bank.biases = Rng(seed + 1).uniform(-0.5, 0.5, (n, d_out))
    return bank


def random_gate(d: int, n: int, seed: int, num_tasks: int = NUM_TASKS) -> GateParams:
    gate = init_gate(d, n, seed, num_tasks)
    # sharper logits keep the top-m choice well away from ties
    gate.w_gate = gate.w_gate * 3.0
    return gate


def random_bottleneck(d: int, r: int, seed: int, f: Activation = Activation.GELU) -> BottleneckBlock:
    rng = Rng(seed)
    hidden = d // r
    return BottleneckBlock(rng.uniform(-0.5, 0.5, (d, hidden)), rng.uniform(-0.5, 0.5, (hidden, d)), f)


@dataclass(frozen=True)
class EquivCase:
    seed: int
    level: GateLevel
    renormalize: bool
    activation: Activation
    s: int
    n: int
    m: int
    d_in: int = 6
    d_out: int = 5

    def to_row(self) -> dict:
        row = asdict(self)
        row["level"] = self.level.value
        row["activation"] = self.activation.value
        return row


def equivalence_cases(count: int = 50, seed: int = 0) -> list[EquivCase]:
    """Deterministic sweep covering every level, activation, length and expert shape."""
    cases = []
    for i in range(count):
        n, m = EXPERT_SHAPES[i % len(EXPERT_SHAPES)]
        cases.append(EquivCase(
            seed=seed * 1000 + i,
            level=LEVELS[i % 3],
            renormalize=(i // 3) % 2 == 0,
            activation=ACTIVATIONS[(i // 2) % 4],
            s=SEQ_LENS[(i // 5) % 3],
            n=n,
            m=m,
        ))
    return cases


def run_equivalence_case(case: EquivCase) -> dict:
    """Max |MEO - MoE(outside)| for one case, sharing the routing decision.

    Token-level cases check both per-token merging and the bottleneck
    variant against MoE applied to the bottleneck output.
    """
    bank = random_bank(case.n, case.d_in, case.d_out, case.activation, case.seed)
    gate = random_gate(case.d_in, case.n, case.seed + 2)
    x = Rng(case.seed + 3).normal((case.s, case.d_in))
    task_id = case.seed % NUM_TASKS if case.level is GateLevel.TASK else None
    gaps = []
    if case.level is GateLevel.TOKEN:
        decision = route(x, gate, GateLevel.TOKEN, case.m, case.renormalize).decision
        gaps.append(equivalence_gap(x, bank, decision, Placement.OUTSIDE).max_abs_gap)
        layer = MeoLayer(bank, gate, GateLevel.TOKEN, case.m, case.renormalize,
                         bottleneck=random_bottleneck(case.d_in, 2 if case.d_in % 2 == 0 else 1, case.seed + 4))
        y_meo, decision = token_level_meo_forward(layer, x)
        x_in = token_attention(x, layer.bottleneck)
        y_moe, _ = mix_expert_outputs(x_in, bank, decision, Placement.OUTSIDE)
        gaps.append(float(np.abs(y_meo - y_moe).max()))
    else:
        moe = MoeLayer(bank, gate, case.level, case.m, Placement.OUTSIDE, case.renormalize)
        meo = MeoLayer(bank, gate, case.level, case.m, case.renormalize)
        y_moe, d_moe = moe_forward(moe, x, task_id)
        y_meo, d_meo = meo_forward(meo, x, task_id)
        if not (np.array_equal(d_moe.indices, d_meo.indices) and np.array_equal(d_moe.scores, d_meo.scores)):
            raise AssertionError(f"routing differs between MoE and MEO for {case}")
        gaps.append(float(np.abs(y_meo - y_moe).max()))
    row = case.to_row()
    row["max_abs_gap"] = max(gaps)
    row["passed"] = row["max_abs_gap"] <= EQUIVALENCE_TOL
    return row


# Committed witness: seeded config where activation placement matters.
WITNESS = dict(seed=20231, n=4, m=2, s=8, d_in=6, d_out=5)


def run_witness(activation: Activation = Activation.RELU) -> dict:
    """Gaps of MEO against MoE with the activation inside and outside the experts."""
    w = WITNESS
    bank = random_bank(w["n"], w["d_in"], w["d_out"], activation, w["seed"])
    gate = random_gate(w["d_in"], w["n"], w["seed"] + 2)
    x = Rng(w["seed"] + 3).normal((w["s"], w["d_in"]))
    decision = route(x, gate, GateLevel.SEQUENCE, w["m"]).decision
    inside = equivalence_gap(x, bank, decision, Placement.INSIDE)
    outside = equivalence_gap(x, bank, decision, Placement.OUTSIDE)
    return {"activation": Activation(activation).value, "gap_inside": inside.max_abs_gap,
            "gap_outside": outside.max_abs_gap, "digest": inside.config_digest}


def small_fixture(seed: int = 7, activation: Activation = Activation.TANH):
    """The gradient-check fixture: s=3, d=5, d_out=4, n=4, m=2."""
    s, d, d_out, n = 3, 5, 4, 4
    bank = random_bank(n, d, d_out, activation, seed)
    gate = random_gate(d, n, seed + 2)
    x = Rng(seed + 3).normal((s, d))
    projection = Rng(seed + 5).normal((s, d_out))
    bottleneck = random_bottleneck(d, 1, seed + 4, Activation.GELU)
    return bank, gate, x, projection, bottleneck


@dataclass(frozen=True)
class GradcheckRow:
    method: str
    placement: str
    level: str
    param: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= GRADCHECK_TOL


def _gradcheck_layer(method, layer, x, projection, task_id, eps):
    holder = {"x": x.copy()}

    def forward():
        if method.startswith("moe"):
            return moe_forward(layer, holder["x"], task_id)[0]
        if layer.level is GateLevel.TOKEN:
            return token_level_meo_forward(layer, holder["x"])[0]
        return meo_forward(layer, holder["x"], task_id)[0]

    def loss():
        return float((forward() * projection).sum())

    backward = moe_backward if method.startswith("moe") else meo_backward
    analytic = backward(layer, holder["x"], projection, task_id).as_dict()
    params = {"weights": layer.bank.weights, "biases": layer.bank.biases, "w_gate": layer.gate.w_gate,
              "x": holder["x"]}
    if layer.level is GateLevel.TASK:
        params["task_embeddings"] = layer.gate.task_embeddings
    if getattr(layer, "bottleneck", None) is not None and layer.level is GateLevel.TOKEN:
        params["w_down"] = layer.bottleneck.w_down
        params["w_up"] = layer.bottleneck.w_up
    numeric = finite_diff_grad(loss, params, eps)
    return {name: max_relative_error(analytic[name], numeric[name]) for name in params}


def run_gradcheck(seed: int = 7, eps: float = 1e-6) -> list[GradcheckRow]:
    """Analytic vs central-difference gradients for MoE and MEO on the small fixture."""
    rows = []
    combos = [
        ("moe", Placement.INSIDE, GateLevel.SEQUENCE),
        ("moe", Placement.OUTSIDE, GateLevel.SEQUENCE),
        ("moe", Placement.INSIDE, GateLevel.TOKEN),
        ("moe", Placement.OUTSIDE, GateLevel.TASK),
        ("meo", Placement.OUTSIDE, GateLevel.SEQUENCE),
        ("meo", Placement.OUTSIDE, GateLevel.TASK),
        ("meo", Placement.OUTSIDE, GateLevel.TOKEN),
    ]
    for method, placement, level in combos:
        bank, gate, x, projection, bottleneck = small_fixture(seed)
        task_id = 1 if level is GateLevel.TASK else None
        if method == "moe":
            layer = MoeLayer(bank, gate, level, 2, placement)
        else:
            layer = MeoLayer(bank, gate, level, 2, bottleneck=bottleneck if level is GateLevel.TOKEN else None)
        errs = _gradcheck_layer(method, layer, x, projection, task_id, eps)
        for name, err in errs.items():
            rows.append(GradcheckRow(method, placement.value, level.value, name, err))
    return rows
