"""Multi-head graph attention over typed conversation graphs.

Messages flow along edge direction: each node attends over its in-
neighbours with per-head attention, heads are concatenated and added back
to the input states (isolated nodes therefore keep their state), and a
position-wise feed-forward layer with its own residual follows each
attention layer. The implementation is sparse: per-edge gathers plus
segment reductions grouped by the receiving node.

The bundle encoder runs word and action graphs first, then seeds the
discourse graph's response states from their refined response states
before running it, and reads each graph out at its Global node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .graphs import GraphBundle, HeteroGraph


@dataclass
class GatConfig:
    n_heads: int = 4
    layers: int = 2
    ffn_mult: int = 4
    leaky_slope: float = 0.2
    dropout: float = 0.0
    fuse_mode: str = "mean"           # discourse response seeding: mean | concat

    def validate(self, d_h: int) -> None:
        if self.n_heads < 1 or d_h % self.n_heads != 0:
            raise ConfigError(f"d_h {d_h} must divide into {self.n_heads} heads")
        if self.layers < 1:
            raise ConfigError("need at least one attention layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.fuse_mode not in ("mean", "concat"):
            raise ConfigError(f"unknown fuse_mode {self.fuse_mode!r}")


def build_gat_params(store, d_h: int, config: GatConfig, graph_names,
                     rng: np.random.Generator) -> None:
    config.validate(d_h)
    dh = d_h // config.n_heads
    scale = 1.0 / np.sqrt(d_h)
    for gname in graph_names:
        for layer in range(config.layers):
            p = f"gat.{gname}.{layer}."
            store.add(p + "w", rng.normal(0.0, scale, size=(d_h, d_h)))
            store.add(p + "al", rng.normal(0.0, 1.0 / np.sqrt(dh),
                                           size=(dh, config.n_heads)))
            store.add(p + "ar", rng.normal(0.0, 1.0 / np.sqrt(dh),
                                           size=(dh, config.n_heads)))
            d_ff = config.ffn_mult * d_h
            store.add(p + "ffn_w1", rng.normal(0.0, scale, size=(d_h, d_ff)))
            store.add(p + "ffn_b1", np.zeros(d_ff))
            store.add(p + "ffn_w2", rng.normal(0.0, 1.0 / np.sqrt(d_ff),
                                               size=(d_ff, d_h)))
            store.add(p + "ffn_b2", np.zeros(d_h))
    if config.fuse_mode == "concat" and "discourse" in graph_names:
        store.add("gat.fuse_w", rng.normal(0.0, 1.0 / np.sqrt(2 * d_h),
                                           size=(2 * d_h, d_h)))
        store.add("gat.fuse_b", np.zeros(d_h))


def _segment_max(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.full((n,) + values.shape[1:], -np.inf)
    np.maximum.at(out, seg, values)
    return out


def _block_projection(a: ad.Tensor, n_heads: int, dh: int) -> ad.Tensor:
    """Lift per-head columns (dh, H) into a block form (H*dh, H).

    Column h of the result holds a[:, h] in rows h*dh:(h+1)*dh and zeros
    elsewhere, so mapped @ result computes every head's scalar projection
    of its own column block in one product.
    """
    tiled = ad.concat([a] * n_heads, axis=0)
    mask = np.zeros((n_heads * dh, n_heads))
    for h in range(n_heads):
        mask[h * dh:(h + 1) * dh, h] = 1.0
    return ad.mul(tiled, mask)


def gat_layer(states: ad.Tensor, src: np.ndarray, dst: np.ndarray, store,
              prefix: str, config: GatConfig) -> ad.Tensor:
    """One attention layer; ``src``/``dst`` are per-edge endpoint ids.

    All heads run column-stacked: per-edge logits, the softmax, and the
    attention weights are (E, n_heads) matrices, and the weighted messages
    come back heads-concatenated from one segment reduction.
    """
    n = states.shape[0]
    d_h = states.shape[1]
    dh = d_h // config.n_heads
    mapped = ad.matmul(states, store[prefix + "w"])
    left = ad.matmul(mapped, _block_projection(store[prefix + "al"],
                                               config.n_heads, dh))
    right = ad.matmul(mapped, _block_projection(store[prefix + "ar"],
                                                config.n_heads, dh))
    logits = ad.leaky_relu(
        ad.add(ad.embedding_lookup(left, dst), ad.embedding_lookup(right, src)),
        config.leaky_slope)
    # Softmax over each receiving node's in-edges, per head column. The max
    # shift is a constant: softmax is shift-invariant, so no gradient flows
    # through it.
    shift = _segment_max(logits.data, dst, n)[dst]
    weights = ad.exp(ad.sub(logits, shift))
    denom = ad.embedding_lookup(ad.segment_sum(weights, dst, n), dst)
    alpha = ad.div(weights, denom)
    # Stretch each head's weight column across its dh value columns.
    expander = np.zeros((config.n_heads, d_h))
    for h in range(config.n_heads):
        expander[h, h * dh:(h + 1) * dh] = 1.0
    messages = ad.mul(ad.matmul(alpha, expander), ad.embedding_lookup(mapped, src))
    aggregated = ad.segment_sum(messages, dst, n)
    return ad.add(states, aggregated)


def ffn(states: ad.Tensor, store, prefix: str) -> ad.Tensor:
    """Position-wise feed-forward with residual."""
    hidden = ad.relu(ad.add(ad.matmul(states, store[prefix + "ffn_w1"]),
                            store[prefix + "ffn_b1"]))
    out = ad.add(ad.matmul(hidden, store[prefix + "ffn_w2"]),
                 store[prefix + "ffn_b2"])
    return ad.add(states, out)


def gat_stack(states: ad.Tensor, src: np.ndarray, dst: np.ndarray, store,
              graph_name: str, config: GatConfig, training: bool = False,
              rng: np.random.Generator | None = None) -> ad.Tensor:
    for layer in range(config.layers):
        prefix = f"gat.{graph_name}.{layer}."
        states = gat_layer(states, src, dst, store, prefix, config)
        states = ffn(states, store, prefix)
        if training and config.dropout > 0.0:
            if rng is None:
                raise ConfigError("dropout requires a random generator")
            keep = 1.0 - config.dropout
            mask = rng.binomial(1, keep, size=states.shape) / keep
            states = ad.mul(states, mask)
    return states


def readout(states: ad.Tensor, graph: HeteroGraph) -> ad.Tensor:
    """Graph embedding = final Global-node state as a (1, d) row."""
    return ad.slice_axis(states, graph.global_id, graph.global_id + 1)


def encode_bundle(bundle: GraphBundle, states_word: ad.Tensor | None,
                  states_action: ad.Tensor | None,
                  resp_init: ad.Tensor, disc_rows: ad.Tensor | None,
                  global_row: ad.Tensor | None, store, config: GatConfig,
                  training: bool = False,
                  rng: np.random.Generator | None = None,
                  use_refined: bool = True) -> dict:
    """Bottom-to-top pass over the active graphs; returns readouts by name.

    ``states_word`` / ``states_action`` are full initial state matrices for
    their graphs (None when ablated). The discourse graph's response rows
    are seeded from the refined response states of whichever of the two
    ran (mean of both, or one, or the raw response states ``resp_init``);
    ``use_refined=False`` forces the raw states.
    """
    out: dict[str, ad.Tensor] = {}
    r = bundle.n_responses
    refined: list[ad.Tensor] = []
    if bundle.word is not None and states_word is not None:
        src, dst = bundle.word.edge_arrays()
        ref = gat_stack(states_word, src, dst, store, "word", config, training, rng)
        out["word"] = readout(ref, bundle.word)
        refined.append(ad.slice_axis(ref, 0, r))
    if bundle.action is not None and states_action is not None:
        src, dst = bundle.action.edge_arrays()
        ref = gat_stack(states_action, src, dst, store, "action", config,
                        training, rng)
        out["action"] = readout(ref, bundle.action)
        refined.append(ad.slice_axis(ref, 0, r))
    if bundle.discourse is not None and global_row is not None:
        if not refined or not use_refined:
            resp_rows = resp_init
        elif len(refined) == 1:
            resp_rows = refined[0]
        elif config.fuse_mode == "concat":
            resp_rows = ad.add(ad.matmul(ad.concat(refined, axis=1),
                                         store["gat.fuse_w"]), store["gat.fuse_b"])
        else:
            resp_rows = ad.mul(ad.add(refined[0], refined[1]), 0.5)
        parts = [resp_rows]
        if disc_rows is not None:
            parts.append(disc_rows)
        parts.append(global_row)
        states = ad.concat(parts, axis=0)
        src, dst = bundle.discourse.edge_arrays()
        ref = gat_stack(states, src, dst, store, "discourse", config, training, rng)
        out["discourse"] = readout(ref, bundle.discourse)
    return out
