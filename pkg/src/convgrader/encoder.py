"""Sliding-window recurrent sequence encoder.

Turns a conversation into one token sequence (responses joined by a
separator), embeds tokens + segments (+ learned positions per window),
runs a direction-shared BiLSTM over each window and averages rows where
windows overlap. The per-direction outputs are summed, which keeps the
encoder symmetric under reversal of a window's content; a position-wise
projection follows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, ValidationError
from .corpus import Conversation

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
SEP_ID = 2
_RESERVED = ("<pad>", "<unk>", "<sep>")


class Vocab:
    """Token -> id table with fixed reserved ids 0=PAD, 1=UNK, 2=SEP."""

    def __init__(self, tokens):
        self.tokens = list(_RESERVED) + [t for t in tokens if t not in _RESERVED]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    @classmethod
    def build(cls, convs) -> "Vocab":
        seen = set()
        for conv in convs:
            for resp in conv.responses:
                seen.update(resp.tokens)
        return cls(sorted(seen))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens[:3] != list(_RESERVED):
            raise ValidationError(
                f"vocabulary file must start with {_RESERVED}")
        return cls(tokens[3:])


@dataclass
class EncoderConfig:
    d_h: int = 64
    max_tokens: int = 1600
    window_len: int = 256
    window_stride: int = 128
    use_positions: bool = True
    segment_mode: str = "speaker"     # or "response_index"
    max_responses: int = 64           # response_index segment table size

    def validate(self) -> None:
        if self.d_h < 1:
            raise ConfigError("d_h must be positive")
        if not (0 < self.window_stride <= self.window_len <= self.max_tokens):
            raise ConfigError(
                "need 0 < window_stride <= window_len <= max_tokens")
        if self.segment_mode not in ("speaker", "response_index"):
            raise ConfigError(f"unknown segment_mode {self.segment_mode!r}")


@dataclass
class SequenceBatch:
    conv_id: str
    token_ids: np.ndarray             # (T,) int64
    segment_ids: np.ndarray           # (T,) int64
    spans: list[tuple[int, int]] = field(default_factory=list)
    truncated: bool = False

    def __len__(self):
        return int(self.token_ids.shape[0])


def assemble_sequence(conv: Conversation, vocab: Vocab,
                      config: EncoderConfig) -> SequenceBatch:
    """Concatenate response tokens with SEP separators and record spans.

    Spans cover only response tokens, never separators. Sequences longer
    than max_tokens are truncated at a response boundary (with a warning);
    a lone over-long first response is hard-truncated as a last resort.
    """
    config.validate()
    ids: list[int] = []
    segs: list[int] = []
    spans: list[tuple[int, int]] = []
    truncated = False
    for r_idx, resp in enumerate(conv.responses):
        if config.segment_mode == "speaker":
            seg = 0 if resp.speaker == "I" else 1
        else:
            seg = min(r_idx, config.max_responses - 1)
        tok_ids = [vocab.id(t) for t in resp.tokens]
        extra = len(tok_ids) + (1 if r_idx > 0 else 0)
        if ids and len(ids) + extra > config.max_tokens:
            truncated = True
            break
        if r_idx > 0:
            ids.append(SEP_ID)
            segs.append(segs[-1])
        start = len(ids)
        if not ids and len(tok_ids) > config.max_tokens:
            tok_ids = tok_ids[:config.max_tokens]
            truncated = True
        ids.extend(tok_ids)
        segs.extend([seg] * len(tok_ids))
        spans.append((start, len(ids)))
        if truncated:
            break
    if truncated:
        log.warning("conversation %s truncated to %d tokens (%d of %d responses kept)",
                    conv.conv_id, len(ids), len(spans), len(conv.responses))
    return SequenceBatch(conv.conv_id, np.asarray(ids, dtype=np.int64),
                         np.asarray(segs, dtype=np.int64), spans, truncated)


def window_layout(n_tokens: int, window_len: int, stride: int) -> list[tuple[int, int]]:
    """Half-open [start, end) windows: starts at stride multiples, clipped."""
    starts = [0]
    while starts[-1] + window_len < n_tokens:
        starts.append(starts[-1] + stride)
    return [(s, min(s + window_len, n_tokens)) for s in starts]


def build_encoder_params(store, config: EncoderConfig, vocab_size: int,
                         rng: np.random.Generator, prefix: str = "encoder.") -> None:
    d = config.d_h
    scale = 1.0 / np.sqrt(d)
    store.add(prefix + "tok_emb", rng.normal(0.0, scale, size=(vocab_size, d)))
    n_segments = 2 if config.segment_mode == "speaker" else config.max_responses
    store.add(prefix + "seg_emb", rng.normal(0.0, scale, size=(n_segments, d)))
    store.add(prefix + "pos_emb", rng.normal(0.0, scale, size=(config.window_len, d)))
    store.add(prefix + "lstm_wx", rng.normal(0.0, scale, size=(d, 4 * d)))
    store.add(prefix + "lstm_u", rng.normal(0.0, scale, size=(d, 4 * d)))
    store.add(prefix + "lstm_b", np.zeros(4 * d))
    store.add(prefix + "out_w", rng.normal(0.0, scale, size=(d, d)))
    store.add(prefix + "out_b", np.zeros(d))


def encode(batch: SequenceBatch, store, config: EncoderConfig,
           prefix: str = "encoder.") -> ad.Tensor:
    """Per-token context states, shape (T, d_h)."""
    T = len(batch)
    if T == 0:
        raise ContractError("cannot encode an empty sequence")
    if T > config.max_tokens:
        raise ContractError(f"sequence of {T} tokens exceeds max_tokens")
    base = ad.add(ad.embedding_lookup(store[prefix + "tok_emb"], batch.token_ids),
                  ad.embedding_lookup(store[prefix + "seg_emb"], batch.segment_ids))
    windows = window_layout(T, config.window_len, config.window_stride)
    counts = np.zeros((T, 1))
    for s, e in windows:
        counts[s:e] += 1.0
    wx = store[prefix + "lstm_wx"]
    u = store[prefix + "lstm_u"]
    b = store[prefix + "lstm_b"]
    total = None
    for s, e in windows:
        x = base if len(windows) == 1 else ad.slice_axis(base, s, e)
        if config.use_positions:
            pos = store[prefix + "pos_emb"]
            if e - s != config.window_len:
                pos = ad.slice_axis(pos, 0, e - s)
            x = ad.add(x, pos)
        fwd, bwd = ad.bilstm(x, wx, u, b)
        h = ad.add(fwd, bwd)
        if len(windows) == 1:
            total = h
        else:
            h = ad.pad_rows(h, s, T)
            total = h if total is None else ad.add(total, h)
    if len(windows) > 1:
        total = ad.div(total, counts)
    return ad.add(ad.matmul(total, store[prefix + "out_w"]), store[prefix + "out_b"])


def mean_pool(states: ad.Tensor) -> ad.Tensor:
    """Mean over all rows, kept as a (1, d) row vector."""
    return ad.reduce_mean(states, axis=0, keepdims=True)


def slice_span(states: ad.Tensor, start: int, end: int) -> ad.Tensor:
    if start >= end:
        raise ContractError(f"empty span [{start}, {end})")
    return ad.slice_axis(states, start, end)
