import numpy as np
import pytest

from meo.config import config_from_dict
from meo.toy import make_clusters, run_train_toy


def _cfg(**train):
    return config_from_dict({"mode": "train-toy", "train": train})


def test_clusters_are_seeded():
    s = _cfg().train
    a, la = make_clusters(s, 3)
    b, lb = make_clusters(s, 3)
    assert a.tobytes() == b.tobytes() and np.array_equal(la, lb)
    assert a.shape == (256, 8) and np.bincount(la).tolist() == [64] * 4


def test_two_clusters_single_expert():
    result = run_train_toy(_cfg(classes=2, n_experts=1, m=1, epochs=200))
    for method in ("moe", "meo"):
        assert result.final_accuracy(method) >= 0.99


@pytest.mark.slow
def test_identity_curves_match_and_learn():
    result = run_train_toy(_cfg())
    moe_loss, moe_acc = result.curve("moe")
    meo_loss, meo_acc = result.curve("meo")
    assert len(moe_loss) == 500
    assert np.abs(moe_loss - meo_loss).max() <= 1e-6
    assert np.array_equal(moe_acc, meo_acc)
    assert result.final_accuracy("moe") >= 0.95 and result.final_accuracy("meo") >= 0.95


def test_relu_inside_curves_diverge():
    result = run_train_toy(_cfg(activation="relu", placement="in", epochs=100))
    gap = np.abs(result.curve("moe")[0] - result.curve("meo")[0]).max()
    assert gap > 1e-3
