"""Segmentation scores (IoU, Dice, AP), table-style aggregation, Cohen's d,
an unbiased polynomial-kernel MMD estimate, the real-only/synthetic-only
cross-evaluation protocols, and the append-only run-metrics log.

Labels absent from both prediction and truth score an undefined sentinel
(None) and are excluded from every mean; rewarding absent-class zeros would
inflate imbalanced-task scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import RngStream


def _as_bool_masks(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    return pred.astype(bool), true.astype(bool)


def iou_per_label(pred_mask, true_mask) -> dict[int, float | None]:
    """Intersection over union per one-hot channel; absent-everywhere labels
    map to None."""
    pred, true = _as_bool_masks(pred_mask, true_mask)
    out: dict[int, float | None] = {}
    for c in range(pred.shape[0]):
        union = np.logical_or(pred[c], true[c]).sum()
        if union == 0:
            out[c] = None
        else:
            out[c] = float(np.logical_and(pred[c], true[c]).sum() / union)
    return out


def dice_per_label(pred_mask, true_mask) -> dict[int, float | None]:
    """2|A and B| / (|A| + |B|) per channel on hard masks; None when both empty."""
    pred, true = _as_bool_masks(pred_mask, true_mask)
    out: dict[int, float | None] = {}
    for c in range(pred.shape[0]):
        total = int(pred[c].sum()) + int(true[c].sum())
        if total == 0:
            out[c] = None
        else:
            out[c] = float(2.0 * np.logical_and(pred[c], true[c]).sum() / total)
    return out


def average_precision(prob, true) -> float | None:
    """Trapezoidal area under the precision-recall curve over the unique
    thresholds of the probability map, with the (recall 0, precision 1)
    anchor prepended; None when the label never occurs."""
    prob = np.asarray(prob, dtype=np.float64).reshape(-1)
    true = np.asarray(true).reshape(-1).astype(bool)
    if prob.shape != true.shape:
        raise ValueError("probability/truth shape mismatch")
    if np.any(prob < 0.0) or np.any(prob > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    positives = int(true.sum())
    if positives == 0:
        return None
    order = np.argsort(-prob, kind="stable")
    sorted_prob = prob[order]
    tp = np.cumsum(true[order])
    count = np.arange(1, prob.size + 1)
    # last index of each threshold run = stats of "predict everything >= tau"
    boundary = np.flatnonzero(np.diff(sorted_prob) != 0.0)
    last = np.concatenate([boundary, [prob.size - 1]])
    precision = tp[last] / count[last]
    recall = tp[last] / positives
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[1.0], precision])
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


def ap_per_label(prob_maps, true_mask) -> dict[int, float | None]:
    """average_precision of each class's probability map against its channel."""
    prob_maps = np.asarray(prob_maps, dtype=np.float64)
    true_mask = np.asarray(true_mask)
    if prob_maps.shape != true_mask.shape:
        raise ValueError("shape mismatch")
    return {c: average_precision(prob_maps[c], true_mask[c])
            for c in range(prob_maps.shape[0])}


def aggregate(per_sample_scores: list[dict], mode: str) -> float:
    """Collapse per-sample {label: score|None} maps into one table row.

    label_mean: average each label over samples where it is defined, then
    average the labels. sample_mean / sample_median: reduce each sample to
    its mean over defined labels, then take mean or median.
    """
    if not per_sample_scores:
        raise ValueError("no scores")
    if mode == "label_mean":
        labels = sorted({c for scores in per_sample_scores for c in scores})
        per_label = []
        for c in labels:
            vals = [s[c] for s in per_sample_scores if s.get(c) is not None]
            if vals:
                per_label.append(sum(vals) / len(vals))
        if not per_label:
            raise ValueError("every label undefined")
        return float(sum(per_label) / len(per_label))
    if mode in ("sample_mean", "sample_median"):
        per_sample = []
        for scores in per_sample_scores:
            vals = [v for v in scores.values() if v is not None]
            if vals:
                per_sample.append(sum(vals) / len(vals))
        if not per_sample:
            raise ValueError("every sample undefined")
        if mode == "sample_mean":
            return float(np.mean(per_sample))
        return float(np.median(per_sample))
    raise ValueError(f"unknown mode {mode!r}")


def cohens_d(group_a, group_b) -> float | None:
    """Standardized mean difference with the pooled, bias-corrected SD
    (denominator n_a + n_b - 2); None when the pooled variance is zero."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least 2 values")
    pooled_var = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (
        a.size + b.size - 2)
    if pooled_var == 0.0:
        return None
    return float((a.mean() - b.mean()) / math.sqrt(pooled_var))


# -- kernel two-sample statistics ---------------------------------------------


def _poly3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a @ b.T / a.shape[1] + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased MMD^2 U-statistic under the degree-3 polynomial kernel."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ValueError("need at least 2 vectors per set")
    kxx = _poly3(x, x)
    kyy = _poly3(y, y)
    kxy = _poly3(x, y)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(term_x + term_y - 2.0 * kxy.mean())


def kernel_mmd(x: np.ndarray, y: np.ndarray, n_splits: int = 10) -> tuple[float, float]:
    """Subset-averaged estimate: both sets cut into n_splits contiguous blocks,
    the U-statistic computed per block pair; returns (mean, sd over blocks)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if n_splits < 2:
        raise ValueError("need at least 2 splits")
    if x.shape[0] < 2 * n_splits or y.shape[0] < 2 * n_splits:
        raise ValueError(f"sets too small for {n_splits} splits of >= 2 vectors")
    estimates = [
        mmd2_unbiased(xi, yi)
        for xi, yi in zip(np.array_split(x, n_splits), np.array_split(y, n_splits))
    ]
    return float(np.mean(estimates)), float(np.std(estimates, ddof=1))


# -- cross-evaluation protocols -------------------------------------------------


def label_mean_iou(predictor, samples) -> float:
    """aggregate('label_mean') of per-sample IoU for a mask predictor."""
    scores = [iou_per_label(predictor(s.image), s.mask) for s in samples]
    return aggregate(scores, "label_mean")


def ro_so_protocol(synthesize, train_set, test_set, train_fn, n_synth: int,
                   rng: RngStream) -> tuple[float, float]:
    """Real-Only and Synthetic-Only cross-evaluation.

    RO trains on the real train split and scores on n_synth synthetic pairs;
    SO trains on n_synth synthetic pairs and scores on the real test split.
    `synthesize(count, stream) -> samples`; `train_fn(samples, stream) ->
    predictor(image) -> one-hot mask`. Both scores are label-mean IoU.
    """
    synth_ro = synthesize(n_synth, rng.spawn(0))
    real_model = train_fn(train_set, rng.spawn(1))
    ro = label_mean_iou(real_model, synth_ro)
    synth_so = synthesize(n_synth, rng.spawn(2))
    synth_model = train_fn(synth_so, rng.spawn(3))
    so = label_mean_iou(synth_model, test_set)
    return ro, so


# -- run log ---------------------------------------------------------------------

CSV_HEADER = "step,split,policy,metric,label,value"


@dataclass
class RunMetrics:
    """Append-only (step, split, policy, metric, label, value) rows."""

    rows: list = field(default_factory=list)

    def log(self, step: int, split: str, policy: str, metric: str, label, value: float) -> None:
        for text in (split, policy, metric, str(label)):
            if "," in text or "\n" in text:
                raise ValueError(f"field may not contain separators: {text!r}")
        self.rows.append((int(step), split, policy, metric, str(label), float(value)))

    def to_csv(self, path) -> None:
        lines = [CSV_HEADER]
        for step, split, policy, metric, label, value in self.rows:
            lines.append(f"{step},{split},{policy},{metric},{label},{value!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @staticmethod
    def from_csv(path) -> "RunMetrics":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError("not a metrics CSV")
        out = RunMetrics()
        for line in lines[1:]:
            step, split, policy, metric, label, value = line.split(",")
            out.rows.append((int(step), split, policy, metric, label, float(value)))
        return out

    def select(self, **criteria) -> list:
        fields = ("step", "split", "policy", "metric", "label", "value")
        idx = {name: i for i, name in enumerate(fields)}
        rows = self.rows
        for name, want in criteria.items():
            rows = [r for r in rows if r[idx[name]] == want]
        return rows
