"""Training loops, evaluation, multi-seed runs and the ablation harness."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .corpus import Conversation
from .encoder import Vocab
from .errors import ConfigError, TrainingAborted
from .metrics import EvalMetrics, MetricsReport, evaluate_predictions
from .model import GradingModel, ModelConfig
from .node_features import WordVecTable
from .params import AdamState, adam_step, lr_exponential_decay
from .scorer import (LossWeights, compute_loss_weights, weighted_mse_value)

log = logging.getLogger(__name__)

THREADS_ENV = "CONVGRADER_THREADS"


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without a lower val loss."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.best = np.inf
        self.bad_epochs = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainLog:
    seed: int
    initial_lr: float
    epochs: list[dict] = field(default_factory=list)
    stopped_early: bool = False

    def final_epoch(self) -> int:
        return len(self.epochs)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "initial_lr": self.initial_lr,
                "stopped_early": self.stopped_early, "epochs": self.epochs}


def _chunks(indices, size: int):
    for at in range(0, len(indices), size):
        yield indices[at:at + size]


def train(model: GradingModel, train_set: list[Conversation],
          dev_set: list[Conversation], cfg: TrainConfig, seed: int,
          initial_lr: float, weights: LossWeights | None = None,
          max_epochs: int | None = None, use_early_stop: bool = True) -> TrainLog:
    """Adam training with gradient accumulation and per-epoch lr decay.

    Gradients are accumulated as sums over each accumulation group and
    scaled by the group size before the optimizer step, so a group of
    micro-batches matches a single batch over their union exactly. The
    parameters left in the model are the last epoch's (no best-epoch
    rewind); the returned log carries per-epoch losses only, so identical
    seeds and data reproduce it bit for bit.
    """
    if weights is None:
        weights = compute_loss_weights(train_set)
    preps = [model.prepare(c) for c in train_set]
    dev_preps = [model.prepare(c) for c in dev_set]
    dev_targets = np.asarray([p.score for p in dev_preps], dtype=np.float64)

    state = AdamState.init(model.store, lr=initial_lr)
    stopper = EarlyStopper(cfg.patience)
    rng = np.random.default_rng(seed)
    logbook = TrainLog(seed=seed, initial_lr=initial_lr)
    limit = cfg.max_epochs if max_epochs is None else max_epochs

    for epoch in range(limit):
        state.lr = lr_exponential_decay(initial_lr, epoch, cfg.lr_decay)
        order = rng.permutation(len(preps))
        micro_batches = list(_chunks(order, cfg.batch_size))
        model.store.zero_grads()
        group_items = 0
        loss_sum = 0.0
        for b_idx, micro in enumerate(micro_batches):
            for prep_i in micro:
                prep = preps[prep_i]
                with ad.Tape() as tape:
                    pred = model.forward(prep, training=True)
                    err = ad.sub(pred, float(prep.score))
                    item_loss = ad.mul(ad.mul(err, err), weights[prep.score])
                value = item_loss.item()
                if not np.isfinite(value):
                    raise TrainingAborted("non-finite training loss", prep.conv_id)
                loss_sum += value
                ad.backward(tape, item_loss, model.store)
            group_items += len(micro)
            if (b_idx + 1) % cfg.grad_accum_steps == 0 or b_idx + 1 == len(micro_batches):
                model.store.scale_grads(1.0 / group_items)
                adam_step(model.store, state)
                model.store.zero_grads()
                group_items = 0
        train_loss = loss_sum / len(preps)
        dev_preds = model.predict(dev_preps)
        val_loss = weighted_mse_value(dev_preds, dev_targets, weights)
        logbook.epochs.append({"epoch": epoch, "lr": state.lr,
                               "train_loss": train_loss, "val_loss": val_loss})
        if use_early_stop and stopper.update(val_loss):
            logbook.stopped_early = True
            break
    return logbook


def evaluate(model: GradingModel, test_set: list[Conversation],
             cefr_map) -> tuple[EvalMetrics, np.ndarray]:
    preps = [model.prepare(c) for c in test_set]
    preds = model.predict(preps)
    targets = np.asarray([p.score for p in preps], dtype=np.float64)
    return evaluate_predictions(preds, targets, cefr_map), preds


def make_word_vecs(cfg: TrainConfig, vocab: Vocab) -> WordVecTable:
    """File-backed table when configured, else deterministic from the vocab.

    Deriving the synthetic table from the vocabulary file (not the raw
    corpus) lets evaluation reconstruct the exact table from saved
    artifacts.
    """
    if cfg.word_vec_path:
        return WordVecTable.load(cfg.word_vec_path)
    return WordVecTable.random(vocab.tokens[3:], cfg.model.word_vec_dim,
                               cfg.word_vec_seed)


@dataclass
class RunResult:
    seed: int
    initial_lr: float
    model: GradingModel
    log: TrainLog
    metrics: EvalMetrics
    predictions: np.ndarray


def run_single(cfg: TrainConfig, datasets, seed: int, initial_lr: float,
               vocab: Vocab | None = None,
               word_vecs: WordVecTable | None = None) -> RunResult:
    train_set, dev_set, test_set = datasets
    if vocab is None:
        vocab = Vocab.build(train_set)
    if word_vecs is None and cfg.model.active_graphs():
        word_vecs = make_word_vecs(cfg, vocab)
    model = GradingModel(cfg.model, vocab, word_vecs, seed=seed)
    logbook = train(model, train_set, dev_set, cfg, seed, initial_lr)
    metrics, preds = evaluate(model, test_set, cfg.cefr_map)
    return RunResult(seed, initial_lr, model, logbook, metrics, preds)


def two_stage_train(cfg: TrainConfig, stage1_sets, stage2_sets,
                    vocab: Vocab | None = None,
                    word_vecs: WordVecTable | None = None,
                    seed: int = 0, initial_lr: float | None = None
                    ) -> tuple[GradingModel, dict]:
    """Posttrain the encoder on one dataset, then train fully on another.

    Stage 1 runs a sequence-only model (encoder + linear head) for
    ``cfg.stage1_epochs`` fixed epochs on the first dataset. Stage 2 builds
    the configured model with fresh graph-side parameters, copies the
    stage-1 encoder weights in, and trains normally on the second dataset.
    With ``stage1_sets=None`` this collapses to plain training.
    """
    if initial_lr is None:
        initial_lr = cfg.initial_lrs[0]
    all_convs = list(stage2_sets[0])
    if stage1_sets is not None:
        all_convs = list(stage1_sets[0]) + all_convs
    if vocab is None:
        vocab = Vocab.build(all_convs)
    if word_vecs is None and cfg.model.active_graphs():
        word_vecs = make_word_vecs(cfg, vocab)

    info: dict = {"stage1": None}
    if stage1_sets is not None:
        seq_only = dc_replace(cfg.model, use_words=False, use_actions=False,
                              use_discourse=False, use_seq=True)
        stage1_model = GradingModel(seq_only, vocab, None, seed=seed)
        stage1_log = train(stage1_model, stage1_sets[0], stage1_sets[1], cfg,
                           seed, initial_lr, max_epochs=cfg.stage1_epochs,
                           use_early_stop=False)
        info["stage1"] = stage1_log.to_dict()

    model = GradingModel(cfg.model, vocab, word_vecs, seed=seed)
    if stage1_sets is not None:
        copied = model.store.copy_values_from(stage1_model.store, prefix="encoder.")
        info["carried_over"] = copied
        start_preds = model.predict([model.prepare(c) for c in stage2_sets[1]])
        start_targets = [c.score for c in stage2_sets[1]]
        weights = compute_loss_weights(stage2_sets[0])
        info["stage2_start_val_loss"] = weighted_mse_value(
            start_preds, start_targets, weights)
    stage2_log = train(model, stage2_sets[0], stage2_sets[1], cfg, seed, initial_lr)
    info["stage2"] = stage2_log.to_dict()
    return model, info


def multi_seed_run(cfg: TrainConfig, datasets, variant: str = "model",
                   vocab: Vocab | None = None,
                   word_vecs: WordVecTable | None = None
                   ) -> tuple[MetricsReport, list[RunResult]]:
    """Train and evaluate one (seed, lr) pair per configured slot.

    Runs are independent; failures are logged, skipped in the aggregate and
    counted in the report. CONVGRADER_THREADS > 1 runs them in a thread
    pool.
    """
    report = MetricsReport(variant=variant)
    results: list[RunResult] = []
    pairs = list(zip(cfg.seeds, cfg.initial_lrs))

    def one(pair):
        seed, lr = pair
        return run_single(cfg, datasets, seed, lr, vocab, word_vecs)

    threads = int(os.environ.get(THREADS_ENV, "1") or "1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(one, pair) for pair in pairs]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except Exception as exc:     # noqa: BLE001 - isolate runs
                    outcomes.append(exc)
    else:
        outcomes = []
        for pair in pairs:
            try:
                outcomes.append(one(pair))
            except Exception as exc:         # noqa: BLE001 - isolate runs
                outcomes.append(exc)
    for pair, outcome in zip(pairs, outcomes):
        if isinstance(outcome, Exception):
            log.error("run (seed=%s, lr=%s) failed: %s", pair[0], pair[1], outcome)
            report.failed_runs += 1
            continue
        results.append(outcome)
        report.runs.append(outcome.metrics)
    return report, results


ABLATION_LETTERS = {"B": "seq", "C": "word", "D": "discourse", "A": "action"}


def parse_subset(label: str) -> dict[str, bool]:
    """'B+CD' / 'C+D+A' style labels -> model component flags."""
    letters = [ch for ch in label.upper() if ch not in "+ "]
    unknown = [ch for ch in letters if ch not in ABLATION_LETTERS]
    if unknown:
        raise ConfigError(f"unknown ablation components {unknown} in {label!r}")
    if not letters:
        raise ConfigError("empty ablation subset")
    members = {ABLATION_LETTERS[ch] for ch in letters}
    return {"use_seq": "seq" in members, "use_words": "word" in members,
            "use_actions": "action" in members,
            "use_discourse": "discourse" in members}


DEFAULT_SUBSETS = ("B", "B+C", "B+D", "B+CD", "B+CDA", "C", "D", "C+D", "C+D+A")


def ablate(cfg: TrainConfig, datasets, subsets=DEFAULT_SUBSETS
           ) -> list[MetricsReport]:
    """One multi-seed run per component subset; baseline row included.

    The sequence-only baseline ('B') is always reported first even when it
    is missing from ``subsets``.
    """
    labels = list(subsets)
    if "B" not in labels:
        labels.insert(0, "B")
    else:
        labels.insert(0, labels.pop(labels.index("B")))
    vocab = Vocab.build(datasets[0])
    word_vecs = make_word_vecs(cfg, vocab)
    reports = []
    for label in labels:
        flags = parse_subset(label)
        sub_cfg = dc_replace(cfg, model=dc_replace(cfg.model, **flags))
        report, _ = multi_seed_run(sub_cfg, datasets, variant=label,
                                   vocab=vocab, word_vecs=word_vecs)
        reports.append(report)
    return reports
