"""Deep-ensemble predictor: k independently initialised MLPs whose prediction
set stands in for a posterior. The averaged prediction is the ensemble output;
class-wise epistemic uncertainty is the across-member variance of the softmax
probability of each unit's predicted class, averaged per class.

Units are samples for classification and pixels for segmentation; both tasks
share the same aggregation code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .nn import MlpModel, init_mlp, predict, softmax_np
from .rng import RngStream
from . import tensor_io

# ranks above every finite uncertainty: a class the model never predicts is
# exactly the failure case uncertainty-guided synthesis targets
ABSENT = math.inf


class UntrainedError(RuntimeError):
    """Prediction requested from an ensemble never marked trained."""


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple
    task: str  # "classification" | "segmentation"
    n_classes: int
    h: int = 0
    w: int = 0
    trained: bool = False

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("ensemble needs k >= 2 members")
        if self.task not in ("classification", "segmentation"):
            raise ValueError(f"unknown task {self.task!r}")
        widths = self.members[0].widths
        if any(m.widths != widths for m in self.members):
            raise ValueError("members must be structurally identical")

    @property
    def k(self) -> int:
        return len(self.members)

    def mark_trained(self) -> "EnsembleModel":
        return replace(self, trained=True)

    def with_member(self, index: int, member: MlpModel) -> "EnsembleModel":
        members = list(self.members)
        members[index] = member
        return replace(self, members=tuple(members))


def init_ensemble(k: int, widths, task: str, n_classes: int, rng: RngStream,
                  dropout_p: float = 0.0, h: int = 0, w: int = 0) -> EnsembleModel:
    members = tuple(init_mlp(widths, rng.spawn(i), dropout_p) for i in range(k))
    return EnsembleModel(members, task, n_classes, h, w)


@dataclass(frozen=True)
class PosteriorSet:
    """Member predictions stacked on axis 0; rows sum to 1 over the last axis."""

    predictions: np.ndarray  # (k, ..., K)

    def __post_init__(self):
        if self.predictions.shape[0] < 1:
            raise ValueError("empty posterior set")
        sums = self.predictions.sum(axis=-1)
        if not np.all(np.abs(sums - 1.0) <= 1e-9):
            raise ValueError("posterior rows must sum to 1")

    @property
    def k(self) -> int:
        return self.predictions.shape[0]


def member_probabilities(ens: EnsembleModel, member: MlpModel, x: np.ndarray) -> np.ndarray:
    """Eval-mode class probabilities for one member: (B, K) or (B, HW, K)."""
    if ens.task == "classification":
        return softmax_np(predict(member, x))
    n = x.shape[0]
    logits = predict(member, x.reshape(n, -1))
    return softmax_np(logits.reshape(n, ens.h * ens.w, ens.n_classes))


def predict_posterior(ens: EnsembleModel, x: np.ndarray) -> PosteriorSet:
    """All members' probabilities on x, dropout off, deterministic.

    Classification x is (B, D); segmentation x is (B, C, H, W) or already
    flattened (B, C*H*W).
    """
    if not ens.trained:
        raise UntrainedError("ensemble has not been trained")
    x = np.asarray(x, dtype=np.float64)
    preds = np.stack([member_probabilities(ens, m, x) for m in ens.members])
    return PosteriorSet(preds)


def mean_prediction(ps: PosteriorSet) -> np.ndarray:
    """Elementwise average of the member predictions."""
    return ps.predictions.mean(axis=0)


def class_uncertainty(ps: PosteriorSet, m_final: np.ndarray | None = None) -> dict[int, float]:
    """Per class: mean across its predicted units of the across-member
    (population) variance of that class's probability; classes predicted
    nowhere map to the ABSENT sentinel."""
    if ps.k < 2:
        raise ValueError("uncertainty needs k >= 2 members")
    if m_final is None:
        m_final = mean_prediction(ps)
    k_classes = ps.predictions.shape[-1]
    probs = ps.predictions.reshape(ps.k, -1, k_classes)  # (k, U, K)
    final = np.asarray(m_final).reshape(-1, k_classes)  # (U, K)
    pred_class = np.argmax(final, axis=-1)  # (U,)
    units = np.arange(probs.shape[1])
    p_sel = probs[:, units, pred_class]  # (k, U) probability of the predicted class
    var = np.mean((p_sel - p_sel.mean(axis=0)) ** 2, axis=0)  # population estimator
    out: dict[int, float] = {}
    for c in range(k_classes):
        chosen = pred_class == c
        out[c] = float(var[chosen].mean()) if np.any(chosen) else ABSENT
    return out


def save_ensemble(ens: EnsembleModel, directory) -> None:
    tensors = {}
    for i, m in enumerate(ens.members):
        for j, p in enumerate(m.parameters()):
            tensors[f"m{i}.p{j}"] = p
    manifest = {"k": ens.k, "task": ens.task, "n_classes": ens.n_classes,
                "h": ens.h, "w": ens.w, "trained": ens.trained,
                "widths": list(ens.members[0].widths),
                "dropout_p": ens.members[0].dropout_p}
    tensor_io.save_tensor_dict(directory, tensors, manifest)


def load_ensemble(directory) -> EnsembleModel:
    tensors, meta = tensor_io.load_tensor_dict(directory)
    widths = tuple(meta["widths"])
    count = 2 * (len(widths) - 1)
    members = []
    for i in range(meta["k"]):
        params = [tensors[f"m{i}.p{j}"] for j in range(count)]
        members.append(MlpModel(widths, tuple(params[0::2]), tuple(params[1::2]),
                                meta["dropout_p"]))
    return EnsembleModel(tuple(members), meta["task"], meta["n_classes"],
                         meta["h"], meta["w"], meta["trained"])
