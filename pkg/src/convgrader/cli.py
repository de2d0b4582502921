"""Command-line interface.

Subcommands: synth, validate, build-graphs, train, evaluate, ablate,
report. All exit 0 on success and 1 on bad input or failed runs; the
CONVGRADER_THREADS environment variable bounds worker threads for
multi-seed runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from .config import (TrainConfig, describe, load_synth_config, load_train_config)
from .corpus import (SynthConfig, load_corpus, save_corpus, split_dataset,
                     synth_generate)
from .encoder import Vocab
from .errors import GraderError
from .graphs import build_bundle, dump_bundle, validate_bundle
from .corpus import ensure_annotations
from .metrics import (MetricsReport, ablation_table, emit_confusion,
                      evaluate_predictions)
from .model import GradingModel
from .params import load_params, save_params
from .training import (ablate, evaluate, make_word_vecs, multi_seed_run,
                       two_stage_train)

log = logging.getLogger(__name__)


def _load_datasets(data: str, cfg: TrainConfig):
    """A directory with {train,dev,test}.jsonl, or one file that gets split."""
    path = Path(data)
    if path.is_dir():
        parts = []
        for name in ("train", "dev", "test"):
            fp = path / f"{name}.jsonl"
            if not fp.exists():
                raise GraderError(f"missing {fp}")
            parts.append(load_corpus(fp))
        return tuple(parts)
    convs = load_corpus(path)
    return split_dataset(convs, cfg.split_ratios, cfg.split_seed)


def _cmd_synth(args) -> int:
    cfg = load_synth_config(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg.rng_seed = args.seed
    convs = synth_generate(cfg)
    save_corpus(convs, args.out)
    scores = sorted({c.score for c in convs})
    print(f"wrote {len(convs)} conversations to {args.out} "
          f"(scores present: {scores})")
    return 0


def _cmd_validate(args) -> int:
    convs = load_corpus(args.path)
    n_resp = sum(len(c.responses) for c in convs)
    print(f"{args.path}: OK ({len(convs)} conversations, {n_resp} responses)")
    return 0


def _cmd_build_graphs(args) -> int:
    convs = load_corpus(args.path)
    dump_lines = []
    totals = {"word": 0, "action": 0, "discourse": 0}
    for conv in convs:
        ensure_annotations(conv)
        bundle = build_bundle(conv)
        validate_bundle(bundle)
        for g in bundle.graphs():
            totals[g.name] += g.n_nodes
        if args.dump:
            dump_lines.append(dump_bundle(bundle))
    print(f"built graphs for {len(convs)} conversations "
          f"(nodes: {totals})")
    if args.dump:
        text = "".join(dump_lines)
        if args.dump == "-":
            sys.stdout.write(text)
        else:
            Path(args.dump).write_text(text, encoding="utf-8")
            print(f"dump written to {args.dump}")
    return 0


def _write_report(report: MetricsReport, out_dir: Path, stem: str = "report") -> None:
    (out_dir / f"{stem}.json").write_text(report.to_json(), encoding="utf-8")
    cells = report.cells()
    lines = [f"{report.variant}: " + "  ".join(f"{k}={cells[k]}"
                                               for k in report.METRIC_KEYS)]
    (out_dir / f"{stem}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    datasets = _load_datasets(args.data, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.stage1_data:
        stage1_convs = load_corpus(cfg.stage1_data)
        stage1_sets = split_dataset(stage1_convs, cfg.split_ratios, cfg.split_seed)
        vocab = Vocab.build(list(stage1_sets[0]) + list(datasets[0]))
        word_vecs = make_word_vecs(cfg, vocab) if cfg.model.active_graphs() else None
        model, info = two_stage_train(cfg, stage1_sets, datasets, vocab,
                                      word_vecs, seed=cfg.seeds[0],
                                      initial_lr=cfg.initial_lrs[0])
        vocab.save(out_dir / "vocab.txt")
        save_params(model.store, out_dir / "run0.ckpt")
        metrics, _ = evaluate(model, datasets[2], cfg.cefr_map)
        report = MetricsReport(variant="two-stage", runs=[metrics])
        _write_report(report, out_dir)
        (out_dir / "train_log.json").write_text(
            json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"two-stage training done; artifacts in {out_dir}")
        return 0

    vocab = Vocab.build(datasets[0])
    word_vecs = make_word_vecs(cfg, vocab) if cfg.model.active_graphs() else None
    report, results = multi_seed_run(cfg, datasets, variant="model",
                                     vocab=vocab, word_vecs=word_vecs)
    vocab.save(out_dir / "vocab.txt")
    logs = []
    for i, res in enumerate(results):
        save_params(res.model.store, out_dir / f"run{i}.ckpt")
        logs.append(res.log.to_dict())
    (out_dir / "train_log.json").write_text(
        json.dumps(logs, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_report(report, out_dir)
    cells = report.cells()
    print(f"{len(report.runs)} runs complete; "
          + "  ".join(f"{k}={cells[k]}" for k in report.METRIC_KEYS))
    if report.failed_runs:
        print(f"{report.failed_runs} runs failed", file=sys.stderr)
        return 1
    return 0


def _cmd_evaluate(args) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    datasets = _load_datasets(args.data, cfg)
    ckpt = Path(args.ckpt)
    vocab_path = Path(args.vocab) if args.vocab else ckpt.parent / "vocab.txt"
    vocab = Vocab.load(vocab_path)
    word_vecs = make_word_vecs(cfg, vocab) if cfg.model.active_graphs() else None
    model = GradingModel(cfg.model, vocab, word_vecs, seed=cfg.seeds[0])
    load_params(model.store, ckpt)
    metrics, preds = evaluate(model, datasets[2], cfg.cefr_map)
    report = MetricsReport(variant="evaluate", runs=[metrics])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_report(report, out_dir)
    np.savetxt(out_dir / "predictions.txt", preds, fmt="%.6f")
    cells = report.cells()
    print("  ".join(f"{k}={cells[k]}" for k in report.METRIC_KEYS))
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    datasets = _load_datasets(args.data, cfg)
    subsets = tuple(s.strip() for s in args.subsets.split(",") if s.strip()) \
        if args.subsets else ()
    from .training import DEFAULT_SUBSETS
    reports = ablate(cfg, datasets, subsets or DEFAULT_SUBSETS)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = ablation_table(reports)
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    payload = {rep.variant: rep.to_dict() for rep in reports}
    (out_dir / "ablation.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(table)
    failed = sum(rep.failed_runs for rep in reports)
    if failed:
        print(f"{failed} runs failed", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    raw = json.loads(Path(args.metrics).read_text(encoding="utf-8"))
    report = MetricsReport.from_dict(raw)
    text = emit_confusion(report, args.confusion)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convgrader",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("validate", help="check a corpus file")
    p.add_argument("path")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("build-graphs", help="build and check conversation graphs")
    p.add_argument("path")
    p.add_argument("--dump", nargs="?", const="-", default=None,
                   help="write a structural dump ('-' for stdout)")
    p.set_defaults(func=_cmd_build_graphs)

    p = sub.add_parser("train", help="train on a corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="run_out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--out", default="eval_out")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="run component ablations")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--subsets", default=None,
                   help="comma-separated, e.g. 'B,B+C,C+D+A'")
    p.add_argument("--out", default="ablate_out")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="render saved metrics")
    p.add_argument("--metrics", required=True)
    p.add_argument("--confusion", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CONVGRADER_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GraderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
