import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meo.checks import random_bank, random_bottleneck, random_gate
from meo.expert_bank import Activation, ExpertBank, Placement, expert_forward
from meo.gating import ConfigurationError, GateDecision, GateLevel, GateParams
from meo.meo_layer import (BottleneckBlock, MeoLayer, apply_merged, init_bottleneck, merge_experts,
                           meo_backward, meo_forward, token_attention, token_level_meo_forward)
from meo.moe_layer import MoeLayer, moe_backward, moe_forward
from meo.tensor_core import DimensionError, Rng

from conftest import max_abs


def test_one_hot_merge_is_bit_equal():
    bank = random_bank(5, 3, 4, "relu", seed=0)
    merged = merge_experts(bank, GateDecision(np.array([[3]]), np.array([[1.0]])))
    assert merged.w_hat.tobytes() == bank.weights[3].tobytes()
    assert merged.b_hat.tobytes() == bank.biases[3].tobytes()


def test_identical_experts_are_a_fixed_point():
    base = random_bank(1, 3, 4, "identity", seed=1)
    bank = ExpertBank(np.repeat(base.weights, 4, axis=0), np.repeat(base.biases, 4, axis=0))
    merged = merge_experts(bank, GateDecision(np.array([[0, 2, 3]]), np.array([[0.2, 0.5, 0.3]])))
    np.testing.assert_allclose(merged.w_hat, base.weights[0], atol=1e-15)
    np.testing.assert_allclose(merged.b_hat, base.biases[0], atol=1e-15)


def test_two_by_two_merge_entrywise():
    w1 = np.array([[1.0, 2.0], [3.0, 4.0]])
    w2 = np.array([[-1.0, 0.5], [0.0, 2.0]])
    bank = ExpertBank(np.stack([w1, w2]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    merged = merge_experts(bank, GateDecision(np.array([[0, 1]]), np.array([[0.3, 0.7]])))
    for i in range(2):
        for j in range(2):
            assert merged.w_hat[i, j] == pytest.approx(0.3 * w1[i, j] + 0.7 * w2[i, j], abs=1e-15)
    np.testing.assert_allclose(merged.b_hat, [0.3, 0.7], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-4, 4), st.integers(0, 1000))
def test_merge_is_homogeneous_in_scores(alpha, seed):
    bank = random_bank(4, 2, 3, "identity", seed)
    dec = GateDecision(np.array([[1, 3]]), np.array([[0.4, 0.6]]))
    scaled = GateDecision(dec.indices, alpha * dec.scores)
    a, b = merge_experts(bank, scaled), merge_experts(bank, dec)
    np.testing.assert_allclose(a.w_hat, alpha * b.w_hat, atol=1e-12)
    np.testing.assert_allclose(a.b_hat, alpha * b.b_hat, atol=1e-12)


def test_merge_ignores_listing_order():
    bank = random_bank(6, 5, 5, "identity", seed=3)
    a = merge_experts(bank, GateDecision(np.array([[4, 1, 2]]), np.array([[0.5, 0.3, 0.2]])))
    b = merge_experts(bank, GateDecision(np.array([[2, 4, 1]]), np.array([[0.2, 0.5, 0.3]])))
    assert a.w_hat.tobytes() == b.w_hat.tobytes() and a.b_hat.tobytes() == b.b_hat.tobytes()


def test_merge_group_out_of_range():
    with pytest.raises(IndexError):
        merge_experts(random_bank(2, 2, 2, "identity", 0), GateDecision(np.array([[0]]), np.array([[1.0]])), 1)


def test_single_expert_bank():
    bank = random_bank(1, 4, 3, "gelu", seed=2)
    gate = GateParams(Rng(0).normal((4, 1)))
    x = Rng(1).normal((6, 4))
    y, _ = meo_forward(MeoLayer(bank, gate, GateLevel.SEQUENCE, 1), x)
    assert max_abs(y, expert_forward(x, bank, 0)) < 1e-15


@pytest.mark.parametrize("level", [GateLevel.SEQUENCE, GateLevel.TASK])
@pytest.mark.parametrize("activation", list(Activation))
def test_matches_outside_mixture(layer_parts, level, activation):
    bank, gate, x = layer_parts(n=8, activation=activation, s=9, seed=4)
    task_id = 1 if level is GateLevel.TASK else None
    y_meo, d1 = meo_forward(MeoLayer(bank, gate, level, 3), x, task_id)
    y_moe, d2 = moe_forward(MoeLayer(bank, gate, level, 3, Placement.OUTSIDE), x, task_id)
    assert np.array_equal(d1.indices, d2.indices)
    assert max_abs(y_meo, y_moe) < 1e-10


def test_identity_also_matches_inside_mixture(layer_parts):
    bank, gate, x = layer_parts(n=5, seed=8)
    y_meo, _ = meo_forward(MeoLayer(bank, gate, GateLevel.SEQUENCE, 2), x)
    y_moe, _ = moe_forward(MoeLayer(bank, gate, GateLevel.SEQUENCE, 2, Placement.INSIDE), x)
    assert max_abs(y_meo, y_moe) < 1e-10


def test_per_row_merging_matches_token_mixture(layer_parts):
    bank, gate, x = layer_parts(n=6, activation="tanh", s=7)
    _, dec = moe_forward(MoeLayer(bank, gate, GateLevel.TOKEN, 2), x)
    y_moe, _ = moe_forward(MoeLayer(bank, gate, GateLevel.TOKEN, 2, Placement.OUTSIDE), x)
    y_meo, _ = apply_merged(x, bank, dec)
    assert max_abs(y_meo, y_moe) < 1e-10


def test_token_attention_zero_up_is_identity():
    x = Rng(0).normal((5, 8))
    assert np.array_equal(token_attention(x, init_bottleneck(8, r=4, seed=1)), x)


def test_token_attention_hand_sized():
    w_down = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, -1.0]])
    w_up = np.array([[1.0, 0.0, 0.0, 2.0], [0.0, 1.0, -1.0, 0.0]])
    block = BottleneckBlock(w_down, w_up, Activation.RELU)
    x = np.array([[1.0, 2.0, -3.0, 1.0]])
    # h = x w_down = [-2, -2] -> relu -> 0, so the residual returns x
    assert np.array_equal(token_attention(x, block), x)
    x = np.array([[1.0, 2.0, 3.0, 1.0]])
    h = np.maximum(x @ w_down, 0)
    np.testing.assert_array_equal(token_attention(x, block), x + h @ w_up)


def test_token_attention_annihilating_product():
    w_down = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    w_up = np.array([[0.0, 0.0, 0.0, 0.0], [3.0, 1.0, 4.0, 1.0]])
    x = Rng(2).normal((3, 4))
    assert np.array_equal(token_attention(x, BottleneckBlock(w_down, w_up, Activation.IDENTITY)), x)


def test_bottleneck_shape_checks():
    with pytest.raises(DimensionError):
        init_bottleneck(10, r=4)
    with pytest.raises(DimensionError):
        BottleneckBlock(np.zeros((4, 2)), np.zeros((2, 3)))


def test_token_level_requires_bottleneck(layer_parts):
    bank, gate, x = layer_parts(d_in=4)
    with pytest.raises(ConfigurationError):
        MeoLayer(bank, gate, GateLevel.TOKEN, 1)
    layer = MeoLayer(bank, gate, GateLevel.TOKEN, 1, bottleneck=init_bottleneck(4, r=2))
    with pytest.raises(ConfigurationError):
        meo_forward(layer, x)


def test_token_level_with_zero_up_is_sequence_level(layer_parts):
    bank, gate, x = layer_parts(n=6, d_in=8, activation="gelu")
    token = MeoLayer(bank, gate, GateLevel.TOKEN, 2, bottleneck=init_bottleneck(8, r=4, seed=3))
    seq = MeoLayer(bank, gate, GateLevel.SEQUENCE, 2)
    y_t, d_t = token_level_meo_forward(token, x)
    y_s, d_s = meo_forward(seq, x)
    assert np.array_equal(d_t.indices, d_s.indices)
    assert np.array_equal(y_t, y_s)


def test_token_level_single_expert(layer_parts):
    bank, gate, x = layer_parts(n=3, d_in=8, activation="tanh")
    block = random_bottleneck(8, 2, seed=5)
    y, dec = token_level_meo_forward(MeoLayer(bank, gate, GateLevel.TOKEN, 1, bottleneck=block), x)
    x_prime = token_attention(x, block)
    assert max_abs(y, expert_forward(x_prime, bank, dec.indices[0, 0])) < 1e-15


def test_token_level_matches_materialised_merge(layer_parts):
    bank, gate, x = layer_parts(n=6, d_in=8, activation="relu")
    block = random_bottleneck(8, 4, seed=6)
    y, dec = token_level_meo_forward(MeoLayer(bank, gate, GateLevel.TOKEN, 3, bottleneck=block), x)
    w_hat = sum(g * bank.weights[k] for k, g in zip(dec.indices[0], dec.scores[0]))
    b_hat = sum(g * bank.biases[k] for k, g in zip(dec.indices[0], dec.scores[0]))
    assert max_abs(y, np.maximum(token_attention(x, block) @ w_hat + b_hat, 0)) < 1e-12


def test_single_row_sequence(layer_parts):
    bank, gate, x = layer_parts(n=4, s=1, activation="gelu")
    y_meo, _ = meo_forward(MeoLayer(bank, gate, GateLevel.SEQUENCE, 2), x)
    y_tok, _ = moe_forward(MoeLayer(bank, gate, GateLevel.TOKEN, 2), x)
    assert max_abs(y_meo, y_tok) < 1e-12


@pytest.mark.parametrize("level", list(GateLevel))
def test_zero_upstream_gives_zero_gradients(layer_parts, level):
    bank, gate, x = layer_parts(d_in=4, activation="gelu")
    block = random_bottleneck(4, 2, seed=1) if level is GateLevel.TOKEN else None
    layer = MeoLayer(bank, gate, level, 2, bottleneck=block)
    task_id = 0 if level is GateLevel.TASK else None
    for name, g in meo_backward(layer, x, np.zeros((x.shape[0], bank.d_out)), task_id).as_dict().items():
        assert not np.any(g), name


def test_one_hot_gradients_are_affine_gradients():
    bank = random_bank(3, 4, 2, "identity", seed=2)
    gate = random_gate(4, 3, seed=3)
    x = Rng(4).normal((5, 4))
    up = Rng(5).normal((5, 2))
    layer = MeoLayer(bank, gate, GateLevel.SEQUENCE, 1)
    _, dec = meo_forward(layer, x)
    k = dec.indices[0, 0]
    grads = meo_backward(layer, x, up)
    assert max_abs(grads.weights[k], x.T @ up) < 1e-14
    assert max_abs(grads.biases[k], up.sum(axis=0)) < 1e-14
    assert max_abs(grads.x, up @ bank.weights[k].T) < 1e-14


@pytest.mark.parametrize("level", [GateLevel.SEQUENCE, GateLevel.TASK])
def test_gradients_match_outside_mixture(layer_parts, level):
    bank, gate, x = layer_parts(n=6, activation="tanh", seed=12)
    task_id = 2 if level is GateLevel.TASK else None
    up = Rng(3).normal((x.shape[0], bank.d_out))
    a = meo_backward(MeoLayer(bank, gate, level, 3), x, up, task_id).as_dict()
    b = moe_backward(MoeLayer(bank, gate, level, 3, Placement.OUTSIDE), x, up, task_id).as_dict()
    assert a.keys() == b.keys()
    for name in a:
        assert max_abs(a[name], b[name]) < 1e-8, name
