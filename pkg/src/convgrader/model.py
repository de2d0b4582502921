"""End-to-end grading model.

Forward pass per conversation: encode the token sequence, initialize the
graph node states (response nodes fuse pooled sequence spans with n-gram
summaries), run attention over the word and action graphs, seed the
discourse graph from their refined response states and run it, then
regress a scalar score from the pooled sequence embedding and the graph
readouts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import autodiff as ad
from .corpus import (Conversation, DISCOURSE_RELATIONS, FILLED_PAUSES, STOPWORDS,
                     ensure_annotations)
from .encoder import (EncoderConfig, SequenceBatch, Vocab, assemble_sequence,
                      build_encoder_params, encode, mean_pool)
from .errors import ConfigError
from .gnn import GatConfig, build_gat_params, encode_bundle
from .graphs import GraphBundle, NodeKind, build_bundle
from .node_features import (WordVecTable, build_feature_params,
                            init_discourse_nodes, init_response_nodes,
                            ngram_embed, project_word_vectors, tile_seed)
from .params import ParamStore
from .scorer import build_regressor_params, regress, regress_single

INVENTORY_ORDER = ("seq", "word", "action", "discourse")


@dataclass
class ModelConfig:
    d_h: int = 64
    word_vec_dim: int = 50
    conv_widths: tuple = (2, 3, 4)
    conv_filters: int = 32
    n_heads: int = 4
    gat_layers: int = 2
    ffn_mult: int = 4
    leaky_slope: float = 0.2
    dropout: float = 0.0
    fuse_mode: str = "mean"
    use_seq: bool = True
    use_words: bool = True
    use_actions: bool = True
    use_discourse: bool = True
    discourse_uses_refined: bool = True
    spo_speakers: str = "both"
    max_tokens: int = 1600
    window_len: int = 256
    window_stride: int = 128
    use_positions: bool = True
    segment_mode: str = "speaker"
    relations: tuple = DISCOURSE_RELATIONS

    def inventory(self) -> list[str]:
        flags = {"seq": self.use_seq, "word": self.use_words,
                 "action": self.use_actions, "discourse": self.use_discourse}
        return [name for name in INVENTORY_ORDER if flags[name]]

    def active_graphs(self) -> list[str]:
        return [n for n in ("word", "action", "discourse") if
                getattr(self, f"use_{n}s" if n != "discourse" else "use_discourse")]

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(d_h=self.d_h, max_tokens=self.max_tokens,
                             window_len=self.window_len,
                             window_stride=self.window_stride,
                             use_positions=self.use_positions,
                             segment_mode=self.segment_mode)

    def gat_config(self) -> GatConfig:
        return GatConfig(n_heads=self.n_heads, layers=self.gat_layers,
                         ffn_mult=self.ffn_mult, leaky_slope=self.leaky_slope,
                         dropout=self.dropout, fuse_mode=self.fuse_mode)

    def validate(self) -> None:
        if not self.inventory():
            raise ConfigError("model needs the sequence embedding or a graph")
        if self.spo_speakers not in ("both", "candidate"):
            raise ConfigError(f"unknown spo_speakers {self.spo_speakers!r}")
        self.encoder_config().validate()
        self.gat_config().validate(self.d_h)


@dataclass
class PreparedConversation:
    conv_id: str
    score: int
    batch: SequenceBatch
    bundle: GraphBundle | None
    ngram_ids: list[np.ndarray] = field(default_factory=list)
    word_vec_rows: np.ndarray | None = None
    spo_vec_rows: np.ndarray | None = None
    n_triplets: int = 0
    disc_relations: list[str] = field(default_factory=list)


def _trim_for_truncation(conv: Conversation, kept: int) -> Conversation:
    """View of the conversation limited to the first ``kept`` responses."""
    responses = []
    for resp in conv.responses[:kept]:
        links = None
        if resp.out_links is not None:
            links = [lk for lk in resp.out_links if lk.target < kept]
        responses.append(dc_replace(resp, out_links=links))
    return Conversation(conv.conv_id, conv.score, responses, conv.split_tag)


class GradingModel:
    def __init__(self, config: ModelConfig, vocab: Vocab,
                 word_vecs: WordVecTable | None = None, seed: int = 0):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.word_vecs = word_vecs
        self.rng = np.random.default_rng(seed)
        self.store = ParamStore()
        graphs = config.active_graphs()
        if graphs and word_vecs is None:
            raise ConfigError("graph components need a word-vector table")
        build_encoder_params(self.store, config.encoder_config(), len(vocab),
                             self.rng)
        if graphs:
            build_feature_params(self.store, config.d_h, config.word_vec_dim,
                                 len(vocab), self.rng, config.conv_widths,
                                 config.conv_filters, config.relations)
            build_gat_params(self.store, config.d_h, config.gat_config(), graphs,
                             self.rng)
        build_regressor_params(self.store, config.d_h, len(config.inventory()),
                               config.n_heads, self.rng)
        if word_vecs is not None and word_vecs.dim != config.word_vec_dim:
            raise ConfigError(
                f"word-vector table dim {word_vecs.dim} != configured "
                f"{config.word_vec_dim}")

    def prepare(self, conv: Conversation) -> PreparedConversation:
        """Cache everything static about one conversation."""
        cfg = self.config
        ensure_annotations(conv, cfg.spo_speakers)
        batch = assemble_sequence(conv, self.vocab, cfg.encoder_config())
        if len(batch.spans) < len(conv.responses):
            conv = _trim_for_truncation(conv, len(batch.spans))
        graphs = cfg.active_graphs()
        prep = PreparedConversation(conv.conv_id, conv.score, batch, None)
        if not graphs:
            return prep
        prep.bundle = build_bundle(conv, use_words="word" in graphs,
                                   use_actions="action" in graphs,
                                   use_discourse="discourse" in graphs,
                                   stopwords=STOPWORDS, filled=FILLED_PAUSES)
        prep.ngram_ids = [batch.token_ids[s:e] for s, e in batch.spans]
        if prep.bundle.word is not None:
            words = [n.payload for n in prep.bundle.word.nodes
                     if n.kind == NodeKind.WORD]
            prep.word_vec_rows = self.word_vecs.rows(words)
        if prep.bundle.action is not None:
            rows = []
            count = 0
            for node in prep.bundle.action.nodes:
                if node.kind in (NodeKind.SUBJECT, NodeKind.PREDICATE,
                                 NodeKind.OBJECT):
                    _, _, text = node.payload
                    toks = text.split() or [""]
                    rows.append(self.word_vecs.rows(toks).mean(axis=0))
                elif node.kind == NodeKind.INTENT:
                    count += 1
            prep.spo_vec_rows = (np.stack(rows) if rows
                                 else np.zeros((0, self.word_vecs.dim)))
            prep.n_triplets = count
        if prep.bundle.discourse is not None:
            prep.disc_relations = [n.payload for n in prep.bundle.discourse.nodes
                                   if n.kind == NodeKind.DISCOURSE]
        return prep

    def forward(self, prep: PreparedConversation,
                training: bool = False) -> ad.Tensor:
        """Raw score prediction, shape (1, 1)."""
        cfg = self.config
        store = self.store
        seq = encode(prep.batch, store, cfg.encoder_config())
        embeddings: dict[str, ad.Tensor] = {}
        if cfg.use_seq:
            embeddings["seq"] = mean_pool(seq)
        if prep.bundle is not None:
            ngram_rows = ngram_embed(prep.ngram_ids, store, cfg.conv_widths)
            spans = prep.batch.spans
            seg_ids = np.full(seq.shape[0], len(spans), dtype=np.int64)
            inv_counts = np.empty((len(spans), 1))
            for r, (s, e) in enumerate(spans):
                seg_ids[s:e] = r
                inv_counts[r, 0] = 1.0 / (e - s)
            sums = ad.segment_sum(seq, seg_ids, len(spans) + 1)
            pools = ad.mul(ad.slice_axis(sums, 0, len(spans)), inv_counts)
            resp0 = init_response_nodes(pools, ngram_rows, store)
            states_word = None
            if prep.bundle.word is not None:
                blocks = [resp0]
                if prep.word_vec_rows is not None and len(prep.word_vec_rows):
                    blocks.append(project_word_vectors(prep.word_vec_rows, store))
                blocks.append(store["feat.global_seed_word"])
                states_word = ad.concat(blocks, axis=0)
            states_action = None
            if prep.bundle.action is not None:
                blocks = [resp0]
                if prep.spo_vec_rows is not None and len(prep.spo_vec_rows):
                    blocks.append(project_word_vectors(prep.spo_vec_rows, store))
                if prep.n_triplets:
                    blocks.append(tile_seed(store["feat.intent_seed"],
                                            prep.n_triplets))
                blocks.append(store["feat.global_seed_action"])
                states_action = ad.concat(blocks, axis=0)
            disc_rows = None
            global_row = None
            if prep.bundle.discourse is not None:
                if prep.disc_relations:
                    disc_rows = init_discourse_nodes(prep.disc_relations, store,
                                                     cfg.relations)
                global_row = store["feat.global_seed_discourse"]
            readouts = encode_bundle(
                prep.bundle,
                states_word, states_action, resp0, disc_rows, global_row,
                store, cfg.gat_config(), training=training,
                rng=self.rng if training and cfg.dropout > 0 else None,
                use_refined=cfg.discourse_uses_refined)
            embeddings.update(readouts)
        inventory = [embeddings[name] for name in cfg.inventory()]
        if len(inventory) == 1:
            return regress_single(inventory[0], store)
        return regress(inventory, store, cfg.n_heads)

    def predict(self, preps) -> np.ndarray:
        """Raw predictions with no tape recording."""
        return np.asarray([self.forward(p).item() for p in preps])
