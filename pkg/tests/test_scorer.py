"""Pairwise regression head and the inverse-frequency loss."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import convgrader.autodiff as ad
from convgrader.errors import ContractError
from convgrader.params import ParamStore
from convgrader.scorer import (LossWeights, build_regressor_params,
                               compute_loss_weights, n_combo, pair_indices,
                               pairwise_combos, regress, regress_single,
                               weighted_mse, weighted_mse_value)

D_H = 4


def test_n_combo_counts():
    assert n_combo(2) == 1
    assert n_combo(3) == 3
    assert n_combo(4) == 6
    with pytest.raises(ContractError):
        n_combo(1)


def test_pair_indices_lexicographic():
    assert pair_indices(3) == [(0, 1), (0, 2), (1, 2)]
    assert pair_indices(4) == [(0, 1), (0, 2), (0, 3),
                               (1, 2), (1, 3), (2, 3)]


def test_pairwise_combos_concatenate_in_order():
    inv = [ad.Tensor(np.full((1, 2), float(i))) for i in range(3)]
    combos = pairwise_combos(inv)
    assert len(combos) == 3
    np.testing.assert_array_equal(combos[0].data, [[0.0, 0.0, 1.0, 1.0]])
    np.testing.assert_array_equal(combos[1].data, [[0.0, 0.0, 2.0, 2.0]])
    np.testing.assert_array_equal(combos[2].data, [[1.0, 1.0, 2.0, 2.0]])


def _reg_store(n_inputs, n_heads, seed=0):
    store = ParamStore()
    build_regressor_params(store, D_H, n_inputs, n_heads,
                           np.random.default_rng(seed))
    return store


def test_regressor_param_shapes():
    store = _reg_store(n_inputs=3, n_heads=2)
    assert store["reg.pair0_w"].shape == (2 * D_H, D_H * 2)
    assert store["reg.pair2_b"].shape == (D_H * 2,)
    assert store["reg.final_w"].shape == (D_H * 2 * 3, 1)
    assert "reg.pair3_w" not in store
    single = _reg_store(n_inputs=1, n_heads=2)
    assert single["reg.single_w"].shape == (D_H, 1)
    assert "reg.final_w" not in single


def test_regress_zero_params_yield_bias():
    store = _reg_store(n_inputs=3, n_heads=2)
    for name in list(store.params):
        store[name].data[:] = 0.0
    store["reg.final_b"].data[:] = 4.25
    inv = [ad.Tensor(np.random.default_rng(i).normal(size=(1, D_H)))
           for i in range(3)]
    out = regress(inv, store, n_heads=2)
    assert out.shape == (1, 1)
    np.testing.assert_allclose(out.data, [[4.25]])


def test_regress_matches_manual_recomputation():
    n_heads = 3
    store = _reg_store(n_inputs=4, n_heads=n_heads, seed=5)
    rng = np.random.default_rng(6)
    inv_data = [rng.normal(size=(1, D_H)) for _ in range(4)]
    out = regress([ad.Tensor(x) for x in inv_data], store, n_heads=n_heads).data

    blocks = []
    for k, (m, j) in enumerate(pair_indices(4)):
        combo = np.concatenate([inv_data[m], inv_data[j]], axis=1)
        mapped = combo @ store[f"reg.pair{k}_w"].data + store[f"reg.pair{k}_b"].data
        blocks.append(np.maximum(mapped, 0.0))
    features = np.concatenate(blocks, axis=1)
    assert features.shape == (1, D_H * n_heads * 6)
    want = features @ store["reg.final_w"].data + store["reg.final_b"].data
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_regress_single_is_linear():
    store = _reg_store(n_inputs=1, n_heads=2, seed=7)
    emb = np.random.default_rng(8).normal(size=(1, D_H))
    out = regress_single(ad.Tensor(emb), store).data
    want = emb @ store["reg.single_w"].data + store["reg.single_b"].data
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_regress_gradients():
    store = _reg_store(n_inputs=3, n_heads=2, seed=9)
    rng = np.random.default_rng(10)
    inv_data = [rng.normal(size=(1, D_H)) for _ in range(3)]

    def closure():
        pred = regress([ad.Tensor(x) for x in inv_data], store, n_heads=2)
        return ad.reduce_sum(ad.mul(pred, pred))

    report = ad.grad_check(closure, store, tol=1e-4, samples_per_param=6)
    assert report.passed, report.failures[:3]


def test_loss_weights_two_score_fixture():
    # counts {5: 3, 6: 1} -> raw {1/3, 1}, mean 2/3 -> weights 0.5 and 1.5;
    # scores never seen inherit the maximum present weight.
    w = compute_loss_weights([5, 5, 5, 6])
    assert w[5] == pytest.approx(0.5)
    assert w[6] == pytest.approx(1.5)
    assert w[1] == pytest.approx(1.5)
    assert w[9] == pytest.approx(1.5)


def test_loss_weights_uniform_counts():
    w = compute_loss_weights([3, 3, 7, 7])
    assert w[3] == pytest.approx(1.0)
    assert w[7] == pytest.approx(1.0)


def test_loss_weights_accept_conversations():
    class Scored:
        def __init__(self, s):
            self.score = s

    w = compute_loss_weights([Scored(5), Scored(5), Scored(5), Scored(6)])
    assert w[6] == pytest.approx(1.5)
    with pytest.raises(ContractError):
        compute_loss_weights([])


@given(st.lists(st.integers(1, 9), min_size=1, max_size=60))
def test_loss_weights_mean_one_over_present(scores):
    w = compute_loss_weights(scores)
    present = sorted(set(scores))
    mean = sum(w[s] for s in present) / len(present)
    assert mean == pytest.approx(1.0)
    # rarer scores never get smaller weights
    counts = {s: scores.count(s) for s in present}
    for a in present:
        for b in present:
            if counts[a] < counts[b]:
                assert w[a] >= w[b]


def test_weighted_mse_fixture():
    weights = LossWeights({s: 0.5 if s == 5 else 1.5 for s in range(1, 10)})
    preds = ad.Tensor(np.array([[5.0], [7.0]]))
    loss = weighted_mse(preds, [5, 6], weights)
    # (0.5 * 0 + 1.5 * 1) / 2
    assert loss.data.item() == pytest.approx(0.75)
    assert weighted_mse_value([5.0, 7.0], [5, 6], weights) == pytest.approx(0.75)


def test_weighted_mse_shape_guard():
    weights = compute_loss_weights([5, 6])
    with pytest.raises(ContractError):
        weighted_mse(ad.Tensor(np.zeros((2, 2))), [5, 6], weights)


def test_weighted_mse_gradient_is_scaled_error():
    store = ParamStore()
    preds = store.add("p", np.array([[4.0], [8.0]]))
    weights = LossWeights({s: 0.5 if s == 5 else 1.5 for s in range(1, 10)})
    with ad.Tape() as tape:
        loss = weighted_mse(preds, [5, 6], weights)
    store.zero_grads()
    ad.backward(tape, loss, store)
    # d/dp of mean(w (p - y)^2) = 2 w (p - y) / n
    np.testing.assert_allclose(store.grads["p"],
                               [[2 * 0.5 * -1.0 / 2], [2 * 1.5 * 2.0 / 2]])
