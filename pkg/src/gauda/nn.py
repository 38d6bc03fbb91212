"""Small MLPs, the two optimizers used across the repo, and shared losses."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor_io
from .rng import RngStream
from .tensor import Tensor, add, matmul, mean, mul, relu, softmax, square, tsum


class GradientError(ArithmeticError):
    """Non-finite gradient reached the optimizer."""


@dataclass(frozen=True)
class MlpModel:
    """Fully connected ReLU network; inverted dropout on hidden activations."""

    widths: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    dropout_p: float = 0.0

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} shapes do not chain with widths {self.widths}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_parameters(self, params: list[np.ndarray]) -> "MlpModel":
        ws = tuple(params[0::2])
        bs = tuple(params[1::2])
        return replace(self, weights=ws, biases=bs)


def init_mlp(widths, rng: RngStream, dropout_p: float = 0.0) -> MlpModel:
    """He-initialised weights, zero biases."""
    widths = tuple(int(w) for w in widths)
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = rng.gaussian((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        ws.append(w)
        bs.append(np.zeros(fan_out))
    return MlpModel(widths, tuple(ws), tuple(bs), dropout_p)


def forward(model: MlpModel, x, mode: str = "eval", rng: RngStream | None = None,
            params: list[Tensor] | None = None) -> Tensor:
    """Build the forward graph; train mode applies dropout masks drawn from rng.

    `params` may supply the weights/biases as graph leaves (in parameters()
    order) so gradients can be read back after .backward(); otherwise the
    model's arrays enter the graph as constants.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and model.dropout_p > 0.0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.data.ndim != 2 or h.shape[1] != model.widths[0]:
        raise ValueError(f"input width {h.shape} does not match model input {model.widths[0]}")
    if params is None:
        params = [Tensor(p) for p in model.parameters()]
    for i in range(model.n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        h = add(matmul(h, w), b)
        if i < model.n_layers - 1:
            h = relu(h)
            if mode == "train" and model.dropout_p > 0.0:
                keep = (rng.uniform(h.shape) >= model.dropout_p).astype(np.float64)
                h = mul(h, Tensor(keep / (1.0 - model.dropout_p)))
    return h


def predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Deterministic eval-mode forward on plain arrays (no graph, no dropout)."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < model.n_layers - 1:
            h = np.maximum(h, 0.0)
    return h


def softmax_np(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# -- losses ---------------------------------------------------------------


def _validate_one_hot(target: np.ndarray) -> None:
    if target.ndim != 2:
        raise ValueError("target must be 2-d (rows x classes)")
    is01 = np.all((target == 0.0) | (target == 1.0))
    if not is01 or not np.all(target.sum(axis=1) == 1.0):
        raise ValueError("target rows must be one-hot")


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of one-hot targets under softmax(logits).

    Fused node: forward uses a stable log-sum-exp, backward applies
    (softmax - target) / N directly.
    """
    target = np.asarray(target, dtype=np.float64)
    _validate_one_hot(target)
    if logits.shape != target.shape:
        raise ValueError(f"logits shape {logits.shape} != target shape {target.shape}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    n = z.shape[0]
    loss = float(((lse.ravel() - (z * target).sum(axis=1))).mean())
    probs = softmax_np(z)

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            logits._accumulate(float(g) * (probs - target) / n)

    return Tensor._node(np.asarray(loss), (logits,), backward, "cross_entropy")


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all entries; gradient 2(pred - target)/N."""
    target_t = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target_t.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target_t.shape}")
    return mean(square(pred - target_t))


# -- optimizers -----------------------------------------------------------


@dataclass
class AdamState:
    """Adam / AdamW moments; decoupled weight decay when `decoupled` is set."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    decoupled: bool
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def adam_state(params: list[np.ndarray], lr: float = 1e-3,
               betas: tuple[float, float] = (0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 0.0) -> AdamState:
    return AdamState(lr, betas[0], betas[1], eps, weight_decay, False,
                     [np.zeros_like(p) for p in params],
                     [np.zeros_like(p) for p in params])


def adamw_state(params: list[np.ndarray], lr: float = 1e-3,
                betas: tuple[float, float] = (0.5, 0.999),
                eps: float = 1e-8, weight_decay: float = 1e-5) -> AdamState:
    state = adam_state(params, lr, betas, eps, weight_decay)
    state.decoupled = True
    return state


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected update; returns fresh parameter arrays and state."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("params/grads/state lengths disagree")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"grad {i} shape {g.shape} != param shape {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {i}")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay > 0.0 and not state.decoupled:
            g = g + state.weight_decay * p
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p_new = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay > 0.0 and state.decoupled:
            p_new = p_new - state.lr * state.weight_decay * p
        new_params.append(p_new)
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps,
                          state.weight_decay, state.decoupled, new_m, new_v, t)
    return new_params, new_state


def train_step(model: MlpModel, state: AdamState, loss_fn, x: np.ndarray,
               rng: RngStream | None = None) -> tuple[MlpModel, AdamState, float]:
    """One optimizer step of `loss_fn(output_tensor) -> scalar Tensor`."""
    params = [Tensor(p, requires_grad=True) for p in model.parameters()]
    out = forward(model, x, mode="train", rng=rng, params=params)
    loss = loss_fn(out)
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
    new_values, state = adam_step(state, model.parameters(), grads)
    return model.with_parameters(new_values), state, loss.item()


# -- checkpoints -----------------------------------------------------------


def save_mlp(directory, model: MlpModel, extra: dict | None = None) -> None:
    tensors = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        tensors[f"w{i}"] = w
        tensors[f"b{i}"] = b
    manifest = {"widths": list(model.widths), "dropout_p": model.dropout_p}
    manifest.update(extra or {})
    tensor_io.save_tensor_dict(directory, tensors, manifest)


def load_mlp(directory) -> tuple[MlpModel, dict]:
    tensors, manifest = tensor_io.load_tensor_dict(directory)
    widths = tuple(manifest["widths"])
    n = len(widths) - 1
    ws = tuple(tensors[f"w{i}"] for i in range(n))
    bs = tuple(tensors[f"b{i}"] for i in range(n))
    return MlpModel(widths, ws, bs, manifest["dropout_p"]), manifest
