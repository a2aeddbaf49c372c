"""
Merging experts gives the same output as mixing them
====================================================

With the activation applied after the weighted sum, summing the selected
experts' weights first and running one matmul is exactly the same as
running every selected expert and summing their outputs.
"""

import numpy as np

from meo.checks import random_bank, random_gate
from meo.expert_bank import Placement
from meo.gating import GateLevel
from meo.meo_layer import MeoLayer, merge_experts, meo_forward
from meo.moe_layer import MoeLayer, moe_forward
from meo.tensor_core import Rng

bank = random_bank(n=16, d_in=32, d_out=24, activation="gelu", seed=1)
gate = random_gate(d=32, n=16, seed=2)
x = Rng(3).normal((10, 32))

y_moe, decision = moe_forward(MoeLayer(bank, gate, GateLevel.SEQUENCE, 4, Placement.OUTSIDE), x)
y_meo, _ = meo_forward(MeoLayer(bank, gate, GateLevel.SEQUENCE, 4), x)
print("selected experts:", decision.indices[0], "scores:", np.round(decision.scores[0], 3))
print("max |MEO - MoE(outside)| =", np.abs(y_meo - y_moe).max())

# the merged expert is an ordinary affine layer
merged = merge_experts(bank, decision)
print("merged weight shape:", merged.w_hat.shape)

# moving the activation inside each expert breaks the identity
y_inside, _ = moe_forward(MoeLayer(bank, gate, GateLevel.SEQUENCE, 4, Placement.INSIDE), x)
print("max |MEO - MoE(inside)|  =", np.abs(y_meo - y_inside).max())
