"""Pairwise-interaction regression head and the weighted loss.

The score inventory (pooled sequence embedding plus graph readouts, in a
fixed order) is expanded into all unordered pairs; each pair's
concatenation passes through its own linear map producing every head's
features at once, then ReLU; all pair blocks concatenate (pairs-major,
heads within a pair) and a final linear layer emits the scalar score.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ContractError


def n_combo(n_inputs: int) -> int:
    if n_inputs < 2:
        raise ContractError(f"pairwise combos need >= 2 inputs, got {n_inputs}")
    return n_inputs * (n_inputs - 1) // 2


def pair_indices(n_inputs: int) -> list[tuple[int, int]]:
    """Lexicographic unordered pairs over the fixed inventory order."""
    return [(m, k) for m in range(n_inputs) for k in range(m + 1, n_inputs)]


def pairwise_combos(inventory: list[ad.Tensor]) -> list[ad.Tensor]:
    """Concatenate each unordered pair of (1, d) embeddings to (1, 2d)."""
    n = len(inventory)
    n_combo(n)
    return [ad.concat([inventory[m], inventory[k]], axis=1)
            for m, k in pair_indices(n)]


def build_regressor_params(store, d_h: int, n_inputs: int, n_heads: int,
                           rng: np.random.Generator) -> None:
    if n_inputs == 1:
        store.add("reg.single_w", rng.normal(0.0, 1.0 / np.sqrt(d_h), size=(d_h, 1)))
        store.add("reg.single_b", np.zeros((1, 1)))
        return
    combos = n_combo(n_inputs)
    for k in range(combos):
        store.add(f"reg.pair{k}_w", rng.normal(0.0, 1.0 / np.sqrt(2 * d_h),
                                               size=(2 * d_h, d_h * n_heads)))
        store.add(f"reg.pair{k}_b", np.zeros(d_h * n_heads))
    width = d_h * n_heads * combos
    store.add("reg.final_w", rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, 1)))
    store.add("reg.final_b", np.zeros((1, 1)))


def regress(inventory: list[ad.Tensor], store, n_heads: int) -> ad.Tensor:
    """Scalar score (1, 1) from >= 2 inventory embeddings."""
    combos = pairwise_combos(inventory)
    blocks = []
    for k, combo in enumerate(combos):
        mapped = ad.add(ad.matmul(combo, store[f"reg.pair{k}_w"]),
                        store[f"reg.pair{k}_b"])
        blocks.append(ad.relu(mapped))
    features = ad.concat(blocks, axis=1)
    return ad.add(ad.matmul(features, store["reg.final_w"]), store["reg.final_b"])


def regress_single(embedding: ad.Tensor, store) -> ad.Tensor:
    """Plain linear head for one-member inventories (sequence-only runs)."""
    return ad.add(ad.matmul(embedding, store["reg.single_w"]),
                  store["reg.single_b"])


class LossWeights:
    """Inverse-frequency score weights, mean 1 over the scores present."""

    def __init__(self, weights: dict[int, float]):
        self.weights = dict(weights)

    def __getitem__(self, score: int) -> float:
        return self.weights[score]

    def as_array(self, scores) -> np.ndarray:
        return np.asarray([self.weights[int(s)] for s in scores])


def compute_loss_weights(convs_or_scores) -> LossWeights:
    """Weights proportional to 1/count per score on the training set.

    Scores present are normalized so their mean weight is 1; scores absent
    from the data get the maximum present weight.
    """
    scores = [c.score if hasattr(c, "score") else int(c) for c in convs_or_scores]
    if not scores:
        raise ContractError("cannot compute loss weights from an empty set")
    counts: dict[int, int] = {}
    for s in scores:
        counts[s] = counts.get(s, 0) + 1
    raw = {s: 1.0 / c for s, c in counts.items()}
    mean = sum(raw.values()) / len(raw)
    present = {s: w / mean for s, w in raw.items()}
    fallback = max(present.values())
    return LossWeights({s: present.get(s, fallback) for s in range(1, 10)})


def weighted_mse(preds: ad.Tensor, targets, weights: LossWeights) -> ad.Tensor:
    """Mean over the batch of weight(Y) * (Y_hat - Y)^2, as a tape scalar."""
    y = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if preds.shape != y.shape:
        raise ContractError(f"predictions {preds.shape} vs targets {y.shape}")
    w = weights.as_array(np.asarray(targets).reshape(-1)).reshape(-1, 1)
    err = ad.sub(preds, y)
    return ad.reduce_mean(ad.mul(ad.mul(err, err), w))


def weighted_mse_value(preds, targets, weights: LossWeights) -> float:
    """Same loss on plain arrays, no tape."""
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    w = weights.as_array(y)
    return float(np.mean(w * (p - y) ** 2))
