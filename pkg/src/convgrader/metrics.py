"""Evaluation metrics and report formatting.

Predictions are clamped to the 1..9 score scale before metric
computation. Macro variants average per-CEFR-group accuracies over the
groups that actually occur in the targets; the confusion matrix rows are
true groups, row-normalized to percentages.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import DEFAULT_CEFR_MAP
from .errors import ContractError

log = logging.getLogger(__name__)


def rmse(preds, targets) -> float:
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return float(np.sqrt(np.mean((p - y) ** 2)))


def pearson(preds, targets) -> tuple[float, bool]:
    """(correlation, degenerate). Constant inputs give (0.0, True) + warning."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    pc = p - p.mean()
    yc = y - y.mean()
    denom = np.sqrt((pc * pc).sum()) * np.sqrt((yc * yc).sum())
    if denom == 0.0:
        warnings.warn("constant predictions or targets: correlation set to 0")
        return 0.0, True
    return float((pc * yc).sum() / denom), False


def margin_accuracy(preds, targets, margin: float) -> float:
    """Percent of |pred - target| <= margin (inclusive)."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return float(100.0 * np.mean(np.abs(p - y) <= margin))


def cefr_groups(cefr_map: dict[int, str]) -> list[str]:
    """Group labels in score order, first occurrence wins."""
    seen: list[str] = []
    for s in sorted(cefr_map):
        if cefr_map[s] not in seen:
            seen.append(cefr_map[s])
    return seen


@dataclass
class EvalMetrics:
    n: int
    rmse: float
    pcc: float
    pcc_degenerate: bool
    acc_half: float
    acc_one: float
    macro_half: float
    macro_one: float
    groups: list[str]
    confusion: list[list[float]]      # row-normalized percentages

    def row(self) -> dict[str, float]:
        return {"rmse": self.rmse, "pcc": self.pcc,
                "acc@0.5": self.acc_half, "acc@1.0": self.acc_one,
                "macc@0.5": self.macro_half, "macc@1.0": self.macro_one}


def evaluate_predictions(preds, targets,
                         cefr_map: dict[int, str] = DEFAULT_CEFR_MAP) -> EvalMetrics:
    p_raw = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p_raw.shape != y.shape or p_raw.size == 0:
        raise ContractError(
            f"predictions {p_raw.shape} and targets {y.shape} must match and be "
            f"non-empty")
    p = np.clip(p_raw, 1.0, 9.0)

    groups = cefr_groups(cefr_map)
    g_index = {g: i for i, g in enumerate(groups)}
    true_groups = np.asarray([g_index[cefr_map[int(t)]] for t in y])
    pred_scores = np.clip(np.round(p), 1, 9).astype(int)
    pred_groups = np.asarray([g_index[cefr_map[s]] for s in pred_scores])

    macro_half, macro_one = [], []
    for g in range(len(groups)):
        mask = true_groups == g
        if not mask.any():
            continue
        macro_half.append(margin_accuracy(p[mask], y[mask], 0.5))
        macro_one.append(margin_accuracy(p[mask], y[mask], 1.0))

    confusion = np.zeros((len(groups), len(groups)))
    for t, q in zip(true_groups, pred_groups):
        confusion[t, q] += 1.0
    sums = confusion.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        confusion = np.where(sums > 0, 100.0 * confusion / sums, 0.0)

    corr, degenerate = pearson(p, y)
    return EvalMetrics(
        n=int(y.size),
        rmse=rmse(p, y),
        pcc=corr,
        pcc_degenerate=degenerate,
        acc_half=margin_accuracy(p, y, 0.5),
        acc_one=margin_accuracy(p, y, 1.0),
        macro_half=float(np.mean(macro_half)),
        macro_one=float(np.mean(macro_one)),
        groups=groups,
        confusion=confusion.tolist(),
    )


def format_cell(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f} ({std:.{digits}f})"


@dataclass
class MetricsReport:
    """Aggregate of one variant's runs: per-run metrics plus mean (std) cells."""

    variant: str
    runs: list[EvalMetrics] = field(default_factory=list)
    failed_runs: int = 0

    METRIC_KEYS = ("rmse", "pcc", "acc@0.5", "acc@1.0", "macc@0.5", "macc@1.0")

    def means(self) -> dict[str, float]:
        return {k: float(np.mean([r.row()[k] for r in self.runs]))
                for k in self.METRIC_KEYS}

    def stds(self) -> dict[str, float]:
        """Sample standard deviation; a single run reports 0."""
        out = {}
        for k in self.METRIC_KEYS:
            vals = [r.row()[k] for r in self.runs]
            out[k] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return out

    def cells(self) -> dict[str, str]:
        m, s = self.means(), self.stds()
        return {k: format_cell(m[k], s[k]) for k in self.METRIC_KEYS}

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "n_runs": len(self.runs),
            "failed_runs": self.failed_runs,
            "mean": self.means(),
            "std": self.stds(),
            "cells": self.cells(),
            "runs": [
                {"n": r.n, **r.row(), "pcc_degenerate": r.pcc_degenerate,
                 "groups": r.groups, "confusion": r.confusion}
                for r in self.runs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricsReport":
        report = cls(variant=raw["variant"], failed_runs=raw.get("failed_runs", 0))
        for run in raw["runs"]:
            report.runs.append(EvalMetrics(
                n=run["n"], rmse=run["rmse"], pcc=run["pcc"],
                pcc_degenerate=run["pcc_degenerate"],
                acc_half=run["acc@0.5"], acc_one=run["acc@1.0"],
                macro_half=run["macc@0.5"], macro_one=run["macc@1.0"],
                groups=run["groups"], confusion=run["confusion"]))
        return report


def mean_confusion(report: MetricsReport) -> tuple[list[str], np.ndarray]:
    if not report.runs:
        raise ContractError("no runs to average")
    groups = report.runs[0].groups
    mats = np.stack([np.asarray(r.confusion) for r in report.runs])
    return groups, mats.mean(axis=0)


def emit_confusion(report: MetricsReport, csv_path) -> str:
    """Write the averaged confusion matrix as CSV plus an aligned text table.

    Returns the text rendering. The text file sits next to the CSV with a
    .txt suffix.
    """
    groups, mat = mean_confusion(report)
    csv_path = str(csv_path)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("true\\pred," + ",".join(groups) + "\n")
        for g, row in zip(groups, mat):
            fh.write(g + "," + ",".join(f"{v:.2f}" for v in row) + "\n")
    width = max(8, max(len(g) for g in groups) + 2)
    lines = ["".join(["true\\pred".ljust(width)] + [g.rjust(width) for g in groups])]
    for g, row in zip(groups, mat):
        lines.append("".join([g.ljust(width)] + [f"{v:.2f}".rjust(width)
                                                 for v in row]))
    text = "\n".join(lines) + "\n"
    txt_path = csv_path[:-4] + ".txt" if csv_path.endswith(".csv") else csv_path + ".txt"
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


def ablation_table(reports: list[MetricsReport]) -> str:
    """Aligned text table: one row per variant, mean (std) cells."""
    keys = MetricsReport.METRIC_KEYS
    header = ["variant"] + list(keys)
    rows = [[rep.variant] + [rep.cells()[k] for k in keys] for rep in reports]
    widths = [max(len(header[c]), *(len(r[c]) for r in rows)) + 2
              for c in range(len(header))]
    out = ["".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        out.append("".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(out) + "\n"
