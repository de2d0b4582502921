"""Initial node states for the conversation graphs.

Word, subject, predicate and object nodes start from projected pretrained
word vectors (out-of-vocabulary tokens fall back to the table mean).
Response nodes combine a pooled span of the sequence-encoder states with a
convolutional n-gram summary through a residual MLP. Discourse nodes come
from a learned relation embedding table; intent and Global nodes use
learned seed vectors.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ValidationError
from .corpus import DISCOURSE_RELATIONS


class WordVecTable:
    """Token -> dense vector map with a mean-vector OOV fallback."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.vectors = vectors
        self.dim = dim
        if vectors:
            self.mean_vec = np.mean(list(vectors.values()), axis=0)
        else:
            self.mean_vec = np.zeros(dim)

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str) -> np.ndarray:
        return self.vectors.get(token, self.mean_vec)

    def rows(self, tokens) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.get(t) for t in tokens])

    @classmethod
    def load(cls, path) -> "WordVecTable":
        """Read a text table: token then its reals, whitespace separated."""
        vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split()
                if not parts:
                    continue
                token, vals = parts[0], parts[1:]
                if dim is None:
                    dim = len(vals)
                    if dim == 0:
                        raise ValidationError("word-vector line has no values",
                                              line_no)
                elif len(vals) != dim:
                    raise ValidationError(
                        f"word-vector width {len(vals)} != {dim}", line_no)
                vectors[token] = np.asarray([float(v) for v in vals])
        if dim is None:
            raise ValidationError("empty word-vector file")
        return cls(vectors, dim)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token, vec in self.vectors.items():
                fh.write(token + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")

    @classmethod
    def random(cls, tokens, dim: int, seed: int = 0) -> "WordVecTable":
        """Deterministic stand-in table for synthetic experiments."""
        rng = np.random.default_rng(seed)
        ordered = sorted(set(tokens))
        return cls({t: rng.normal(0.0, 1.0, size=dim) for t in ordered}, dim)


def build_feature_params(store, d_h: int, word_dim: int, ngram_vocab: int,
                         rng: np.random.Generator, conv_widths=(2, 3, 4),
                         conv_filters: int = 32,
                         relations=DISCOURSE_RELATIONS) -> None:
    scale = 1.0 / np.sqrt(d_h)
    store.add("feat.word_proj_w", rng.normal(0.0, 1.0 / np.sqrt(word_dim),
                                             size=(word_dim, d_h)))
    store.add("feat.word_proj_b", np.zeros(d_h))
    store.add("feat.ngram_emb", rng.normal(0.0, scale, size=(ngram_vocab, d_h)))
    for w in conv_widths:
        store.add(f"feat.conv{w}_w", rng.normal(0.0, 1.0 / np.sqrt(w * d_h),
                                                size=(w * d_h, conv_filters)))
        store.add(f"feat.conv{w}_b", np.zeros(conv_filters))
    pooled = conv_filters * len(conv_widths)
    for direction in ("f", "b"):
        store.add(f"feat.ngram_wx_{direction}",
                  rng.normal(0.0, 1.0 / np.sqrt(pooled), size=(pooled, 4 * d_h)))
        store.add(f"feat.ngram_b_{direction}", np.zeros(4 * d_h))
    store.add("feat.ngram_proj_w", rng.normal(0.0, 1.0 / np.sqrt(2 * d_h),
                                              size=(2 * d_h, d_h)))
    store.add("feat.ngram_proj_b", np.zeros(d_h))
    store.add("feat.resp_mlp_w1", rng.normal(0.0, 1.0 / np.sqrt(2 * d_h),
                                             size=(2 * d_h, d_h)))
    store.add("feat.resp_mlp_b1", np.zeros(d_h))
    store.add("feat.resp_mlp_w2", rng.normal(0.0, scale, size=(d_h, d_h)))
    store.add("feat.resp_mlp_b2", np.zeros(d_h))
    store.add("feat.rel_emb", rng.normal(0.0, scale, size=(len(relations), d_h)))
    store.add("feat.intent_seed", rng.normal(0.0, scale, size=(1, d_h)))
    for gname in ("word", "action", "discourse"):
        store.add(f"feat.global_seed_{gname}", rng.normal(0.0, scale, size=(1, d_h)))


def project_word_vectors(vec_rows: np.ndarray, store) -> ad.Tensor:
    """(n, word_dim) raw vectors -> (n, d_h) node states."""
    return ad.add(ad.matmul(vec_rows, store["feat.word_proj_w"]),
                  store["feat.word_proj_b"])


def _lstm_first_step(feats: ad.Tensor, store, direction: str,
                     d_h: int) -> ad.Tensor:
    """One recurrent step from a zero state, rows independent.

    With nothing to carry, the forget gate multiplies a zero cell and the
    recurrent weight a zero hidden state, so neither exists here: the step
    reduces to gating the input projection.
    """
    z = ad.add(ad.matmul(feats, store[f"feat.ngram_wx_{direction}"]),
               store[f"feat.ngram_b_{direction}"])
    i = ad.sigmoid(ad.slice_axis(z, 0, d_h, axis=1))
    g = ad.tanh(ad.slice_axis(z, 2 * d_h, 3 * d_h, axis=1))
    o = ad.sigmoid(ad.slice_axis(z, 3 * d_h, 4 * d_h, axis=1))
    return ad.mul(o, ad.tanh(ad.mul(i, g)))


def ngram_embed(token_id_lists, store, conv_widths=(2, 3, 4)) -> ad.Tensor:
    """Convolutional n-gram summaries, one (d_h) row per response.

    All responses run through the convolutions as one stack separated by
    zeroed gap rows wide enough that no kernel spans two responses, so the
    result equals a per-response convolution with zero padding. Each
    response's outputs are max-pooled per width, concatenated, and passed
    through a single bidirectional recurrent step plus a projection.
    """
    if not token_id_lists:
        raise ConfigError("ngram_embed needs at least one response")
    if any(len(ids) == 0 for ids in token_id_lists):
        raise ConfigError("ngram_embed needs at least one token per response")
    gap = max(conv_widths) - 1
    spans = []
    chunks = []
    at = 0
    for ids in token_id_lists:
        spans.append((at, at + len(ids)))
        chunks.append(np.asarray(ids, dtype=np.int64))
        chunks.append(np.zeros(gap, dtype=np.int64))
        at += len(ids) + gap
    ids_all = np.concatenate(chunks[:-1]) if gap else np.concatenate(chunks)
    keep = np.zeros((len(ids_all), 1))
    for s, e in spans:
        keep[s:e] = 1.0

    emb = ad.mul(ad.embedding_lookup(store["feat.ngram_emb"], ids_all), keep)
    kernels = [(w, store[f"feat.conv{w}_w"], store[f"feat.conv{w}_b"])
               for w in conv_widths]
    allw = ad.concat(ad.conv1d(emb, kernels), axis=1)
    pooled = ad.concat([ad.reduce_max(ad.slice_axis(allw, s, e), axis=0)
                        for s, e in spans], axis=0)
    pooled = ad.reshape(pooled, (len(spans), -1))
    d_h = store["feat.ngram_proj_b"].size
    both = ad.concat([_lstm_first_step(pooled, store, "f", d_h),
                      _lstm_first_step(pooled, store, "b", d_h)], axis=1)
    return ad.add(ad.matmul(both, store["feat.ngram_proj_w"]),
                  store["feat.ngram_proj_b"])


def init_response_nodes(span_pools: ad.Tensor, ngram_rows: ad.Tensor,
                        store) -> ad.Tensor:
    """Fuse pooled sequence spans with n-gram summaries, residually.

    Both inputs are (R, d_h), row r belonging to response r. The MLP maps
    their concatenation back to d_h and the n-gram summary is added back,
    so a zero MLP leaves exactly the n-gram states.
    """
    joint = ad.concat([span_pools, ngram_rows], axis=1)
    hidden = ad.relu(ad.add(ad.matmul(joint, store["feat.resp_mlp_w1"]),
                            store["feat.resp_mlp_b1"]))
    mapped = ad.add(ad.matmul(hidden, store["feat.resp_mlp_w2"]),
                    store["feat.resp_mlp_b2"])
    return ad.add(mapped, ngram_rows)


def init_discourse_nodes(relations: list[str], store,
                         relation_vocab=DISCOURSE_RELATIONS) -> ad.Tensor:
    index = {rel: i for i, rel in enumerate(relation_vocab)}
    try:
        ids = np.asarray([index[rel] for rel in relations], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"unknown discourse relation {exc.args[0]!r}") from None
    return ad.embedding_lookup(store["feat.rel_emb"], ids)


def tile_seed(seed: ad.Tensor, count: int) -> ad.Tensor:
    """Repeat a (1, d) learned seed into ``count`` rows, gradients summed."""
    return ad.matmul(np.ones((count, 1)), seed)
