"""Batch-construction policies: static inverse-sqrt frequency weighting,
score-based adaptive weighting, and uncertainty-based adaptive weighting,
plus the weighted batch draw that lifts class weights to samples.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .rng import RngStream

FLOOR = 0.05  # keeps every class sampleable under adaptive weighting


@dataclass(frozen=True)
class ClassWeights:
    """Unnormalised nonnegative class weights with provenance and an update counter."""

    weights: dict
    provenance: str  # frequency | score | uncertainty | uniform
    step: int = 0

    def __post_init__(self):
        if not self.weights:
            raise ValueError("no classes")
        vals = np.array(list(self.weights.values()), dtype=np.float64)
        if np.any(vals < 0.0) or not np.all(np.isfinite(vals)):
            raise ValueError("weights must be finite and nonnegative")
        if not np.any(vals > 0.0):
            raise ValueError("at least one weight must be strictly positive")

    def normalized(self) -> dict:
        total = sum(self.weights.values())
        return {c: w / total for c, w in self.weights.items()}


def uniform_weights(classes) -> ClassWeights:
    return ClassWeights({int(c): 1.0 for c in classes}, "uniform")


def freq_weights(histogram: dict) -> ClassWeights:
    """w_c = 1 / sqrt(f(c)); zero-count classes are excluded with a warning."""
    weights = {}
    for c, count in histogram.items():
        if count < 0:
            raise ValueError(f"negative count for class {c}")
        if count == 0:
            warnings.warn(f"class {c} has zero count, excluded from frequency weights",
                          stacklevel=2)
            continue
        weights[int(c)] = 1.0 / math.sqrt(count)
    return ClassWeights(weights, "frequency")


def score_adaptive_update(prev: ClassWeights, scores: dict, eta: float = FLOOR) -> ClassWeights:
    """w_c proportional to (1 - score_c) + eta, scores in [0, 1]."""
    for c, s in scores.items():
        if not (0.0 <= s <= 1.0):
            raise ValueError(f"score for class {c} outside [0, 1]: {s}")
    weights = {int(c): (1.0 - s) + eta for c, s in scores.items()}
    return ClassWeights(weights, "score", prev.step + 1)


def uncertainty_adaptive_update(prev: ClassWeights, ue: dict, eta: float = FLOOR) -> ClassWeights:
    """w_c proportional to UE_c + eta; absent classes (infinite sentinel) take
    the current maximum finite uncertainty before normalization."""
    finite = [u for u in ue.values() if math.isfinite(u)]
    for c, u in ue.items():
        if math.isfinite(u) and u < 0.0:
            raise ValueError(f"negative uncertainty for class {c}")
    ceiling = max(finite) if finite else 0.0
    weights = {int(c): (u if math.isfinite(u) else ceiling) + eta for c, u in ue.items()}
    return ClassWeights(weights, "uncertainty", prev.step + 1)


def sample_weights(presence: list, cw: ClassWeights, mode: str = "mean") -> np.ndarray:
    """Per-sample weights from class weights over each sample's presence set.

    mode "mean" averages the present classes' normalized weights (smoother for
    multi-label samples); "max" takes the largest. Classes missing from the
    weight map are skipped; a sample with no weighted class gets weight 0.
    """
    if mode not in ("mean", "max"):
        raise ValueError(f"unknown mode {mode!r}")
    nw = cw.normalized()
    out = np.zeros(len(presence))
    for i, classes in enumerate(presence):
        vals = [nw[c] for c in classes if c in nw]
        if vals:
            out[i] = sum(vals) / len(vals) if mode == "mean" else max(vals)
    return out


def draw_batch(presence: list, cw: ClassWeights, batch_size: int, rng: RngStream,
               mode: str = "mean") -> np.ndarray:
    """batch_size sample ids drawn with replacement proportional to per-sample
    weights; deterministic given the stream."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not presence:
        raise ValueError("empty dataset")
    return rng.weighted_indices(sample_weights(presence, cw, mode), batch_size)
