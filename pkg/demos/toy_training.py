"""
Training MoE and MEO side by side
=================================

Four Gaussian clusters, 8 experts with 2 selected per sample, plain
gradient descent. With a linear activation the two models follow
identical loss curves; with ReLU inside the experts they drift apart.
"""

import numpy as np

from meo.config import config_from_dict
from meo.toy import run_train_toy

linear = run_train_toy(config_from_dict({"mode": "train-toy"}))
moe_loss, _ = linear.curve("moe")
meo_loss, _ = linear.curve("meo")
print("epochs:", len(moe_loss))
print("loss at 0, 100, 499:", np.round(moe_loss[[0, 100, 499]], 4))
print("largest per-epoch gap:", np.abs(moe_loss - meo_loss).max())
print("final accuracy:", linear.final_accuracy("moe"), linear.final_accuracy("meo"))

relu = run_train_toy(config_from_dict({"mode": "train-toy",
                                       "train": {"activation": "relu", "placement": "in", "epochs": 200}}))
gap = np.abs(relu.curve("moe")[0] - relu.curve("meo")[0])
print("relu inside, largest gap:", gap.max())
