"""Paired image/mask autoencoders with an optional vector-quantization
bottleneck.

Images and masks are compressed by separate encoder/decoder MLPs into a pair
of latents whose concatenation is the diffusion engine's training space. The
image branch minimizes reconstruction MSE, the mask branch mean per-pixel
cross entropy. Quantization is applied decoder-side: encoders emit continuous
latents, the straight-through estimator carries gradients past the codebook
lookup, and the codebook/commitment terms keep the two aligned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nn import MlpModel, adam_state, adam_step, cross_entropy, forward, init_mlp, predict
from .rng import RngStream
from .tensor import Tensor, matmul, mean, reshape, square
from . import tensor_io


class MaskError(ValueError):
    """Mask violates the one-hot contract."""


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; .codec holds the last finite state."""

    def __init__(self, message: str, codec: "PairedCodec"):
        super().__init__(message)
        self.codec = codec


@dataclass(frozen=True)
class PairedSample:
    """An image in [0,1], its one-hot mask, and the set of labels present."""

    image: np.ndarray  # (C, H, W)
    mask: np.ndarray  # (K, H, W), one-hot over axis 0
    presence: frozenset


def make_paired_sample(image: np.ndarray, mask: np.ndarray) -> PairedSample:
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if image.ndim != 3 or mask.ndim != 3 or image.shape[1:] != mask.shape[1:]:
        raise MaskError(f"bad shapes image {image.shape}, mask {mask.shape}")
    if np.any((mask != 0.0) & (mask != 1.0)) or not np.all(mask.sum(axis=0) == 1.0):
        raise MaskError("mask must be exactly one-hot at every pixel")
    if np.any(image < 0.0) or np.any(image > 1.0):
        raise MaskError("image values must lie in [0, 1]")
    presence = frozenset(int(c) for c in range(mask.shape[0]) if mask[c].any())
    return PairedSample(image, mask, presence)


def mask_from_argmax(index_map: np.ndarray, k: int) -> np.ndarray:
    """One-hot (K, H, W) mask from an (H, W) class-index map."""
    out = np.zeros((k,) + index_map.shape)
    for c in range(k):
        out[c] = index_map == c
    return out


@dataclass(frozen=True)
class PairedLatent:
    z_x: np.ndarray  # (d_lat,)
    z_m: np.ndarray  # (d_lat,)

    @property
    def joined(self) -> np.ndarray:
        return np.concatenate([self.z_x, self.z_m])


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray  # (V, d_code)
    lambda_commit: float = 0.25

    def __post_init__(self):
        if self.entries.ndim != 2 or self.entries.shape[0] < 1:
            raise ValueError("codebook must be a nonempty (V, d_code) matrix")

    def collapse_pairs(self, tol: float = 1e-6) -> int:
        """Number of distinct entry pairs closer than tol (0 = healthy)."""
        diff = self.entries[:, None, :] - self.entries[None, :, :]
        close = np.sqrt((diff**2).sum(axis=2)) < tol
        return int((np.triu(close, k=1)).sum())


@dataclass
class AEConfig:
    d_lat: int = 16
    enc_hidden: tuple = (64,)
    dec_hidden: tuple = (64,)
    vocab: int = 64
    d_code: int = 4
    lambda_commit: float = 0.25
    use_vq: bool = True
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3


@dataclass(frozen=True)
class PairedCodec:
    """Trained encoder/decoder pairs plus shape metadata and the codebook."""

    enc_x: MlpModel
    dec_x: MlpModel
    enc_m: MlpModel
    dec_m: MlpModel
    book: Codebook | None
    c_img: int
    h: int
    w: int
    k: int
    d_lat: int

    @property
    def input_dims(self) -> int:
        return self.c_img * self.h * self.w + self.k * self.h * self.w

    @property
    def compression_ratio(self) -> float:
        return self.input_dims / (2 * self.d_lat)


def _flat_image(sample_image: np.ndarray) -> np.ndarray:
    return sample_image.reshape(-1)


def _flat_mask(sample_mask: np.ndarray) -> np.ndarray:
    return sample_mask.reshape(-1)


def encode_pair(enc_x: MlpModel, enc_m: MlpModel, sample: PairedSample) -> PairedLatent:
    """Deterministic continuous latents for one sample (no quantization here)."""
    z_x = predict(enc_x, _flat_image(sample.image)[None, :])[0]
    z_m = predict(enc_m, _flat_mask(sample.mask)[None, :])[0]
    return PairedLatent(z_x, z_m)


def encode_batch(codec: PairedCodec, images: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Joint latents (N, 2 d_lat) for stacked (N,C,H,W) images and (N,K,H,W) masks."""
    n = images.shape[0]
    z_x = predict(codec.enc_x, images.reshape(n, -1))
    z_m = predict(codec.enc_m, masks.reshape(n, -1))
    return np.concatenate([z_x, z_m], axis=1)


def quantize(z: np.ndarray, book: Codebook):
    """Nearest-entry lookup per d_code sub-vector; ties go to the lowest index.

    Returns (z_q, indices, (codebook_loss, commitment_loss)); losses are the
    mean squared quantization gap, identical by symmetry but kept separate to
    mirror their distinct training roles.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    v, d_code = book.entries.shape
    if z2.shape[1] % d_code != 0:
        raise ValueError(f"latent width {z2.shape[1]} not divisible by d_code {d_code}")
    groups = z2.reshape(-1, d_code)
    # squared distances, argmin picks the first (lowest) index on exact ties
    d2 = (groups**2).sum(axis=1, keepdims=True) - 2.0 * groups @ book.entries.T + (
        book.entries**2
    ).sum(axis=1)[None, :]
    idx = np.argmin(d2, axis=1)
    z_q = book.entries[idx].reshape(z2.shape)
    gap = float(np.mean((z_q - z2) ** 2))
    indices = idx.reshape(z2.shape[0], -1)
    if single:
        return z_q[0], indices[0], (gap, gap)
    return z_q, indices, (gap, gap)


def _vq_graph_terms(z_t: Tensor, book_t: Tensor, book: Codebook):
    """Straight-through z_q plus differentiable codebook/commitment losses."""
    z_np = z_t.data
    z_q_np, idx, _ = quantize(z_np, book)
    v, d_code = book.entries.shape
    flat_idx = idx.reshape(-1)
    sel = np.zeros((flat_idx.shape[0], v))
    sel[np.arange(flat_idx.shape[0]), flat_idx] = 1.0
    e_t = reshape(matmul(Tensor(sel), book_t), z_np.shape)
    z_q_st = z_t + Tensor(z_q_np - z_np)  # forward z_q, backward identity
    cb_loss = mean(square(e_t - Tensor(z_np)))
    commit = mean(square(z_t - Tensor(z_q_np)))
    return z_q_st, cb_loss, commit


def decode_pair(codec: PairedCodec, latent: PairedLatent) -> PairedSample:
    """Decoders applied to a latent pair; image clamped, mask argmax one-hot."""
    x = predict(codec.dec_x, latent.z_x[None, :])[0]
    image = np.clip(x, 0.0, 1.0).reshape(codec.c_img, codec.h, codec.w)
    logits = predict(codec.dec_m, latent.z_m[None, :])[0]
    per_pixel = logits.reshape(codec.h * codec.w, codec.k)
    # argmax takes the first maximum, so exact ties resolve to the lowest class
    labels = np.argmax(per_pixel, axis=1).reshape(codec.h, codec.w)
    mask = mask_from_argmax(labels, codec.k)
    return make_paired_sample(image, mask)


def decode_mask_labels(codec: PairedCodec, z_m: np.ndarray) -> np.ndarray:
    """Batched (N, H, W) label maps from mask latents (N, d_lat)."""
    logits = predict(codec.dec_m, z_m)
    per_pixel = logits.reshape(-1, codec.k)
    return np.argmax(per_pixel, axis=1).reshape(z_m.shape[0], codec.h, codec.w)


def _codec_params(codec: PairedCodec) -> list[np.ndarray]:
    parts = (
        codec.enc_x.parameters()
        + codec.dec_x.parameters()
        + codec.enc_m.parameters()
        + codec.dec_m.parameters()
    )
    if codec.book is not None:
        parts = parts + [codec.book.entries]
    return parts


def _codec_with_params(codec: PairedCodec, values: list[np.ndarray]) -> PairedCodec:
    sizes = [len(m.parameters()) for m in (codec.enc_x, codec.dec_x, codec.enc_m, codec.dec_m)]
    models = []
    at = 0
    for m, s in zip((codec.enc_x, codec.dec_x, codec.enc_m, codec.dec_m), sizes):
        models.append(m.with_parameters(values[at : at + s]))
        at += s
    book = codec.book
    if book is not None:
        book = Codebook(values[at], book.lambda_commit)
    return PairedCodec(models[0], models[1], models[2], models[3], book,
                       codec.c_img, codec.h, codec.w, codec.k, codec.d_lat)


def train_autoencoders(samples: list[PairedSample], config: AEConfig,
                       rng: RngStream) -> tuple[PairedCodec, dict]:
    """Joint Adam training of both branches (and the codebook when VQ is on).

    Returns the trained codec and per-epoch loss curves. A non-finite loss
    aborts with DivergenceError carrying the last finite codec.
    """
    if not samples:
        raise ValueError("empty dataset")
    c_img, h, w = samples[0].image.shape
    k = samples[0].mask.shape[0]
    if 2 * config.d_lat >= (c_img + k) * h * w:
        raise ValueError(
            f"no compression: 2*{config.d_lat} >= {(c_img + k) * h * w} input dims")
    images = np.stack([s.image.reshape(-1) for s in samples])
    masks = np.stack([s.mask.reshape(-1) for s in samples])
    n = images.shape[0]

    init_rng = rng.spawn(0)
    enc_x = init_mlp((c_img * h * w, *config.enc_hidden, config.d_lat), init_rng.spawn(0))
    dec_x = init_mlp((config.d_lat, *config.dec_hidden, c_img * h * w), init_rng.spawn(1))
    enc_m = init_mlp((k * h * w, *config.enc_hidden, config.d_lat), init_rng.spawn(2))
    dec_m = init_mlp((config.d_lat, *config.dec_hidden, k * h * w), init_rng.spawn(3))
    book = None
    if config.use_vq:
        if config.d_lat % config.d_code != 0:
            raise ValueError("d_code must divide d_lat")
        book = Codebook(init_rng.spawn(4).gaussian((config.vocab, config.d_code)),
                        config.lambda_commit)
    codec = PairedCodec(enc_x, dec_x, enc_m, dec_m, book, c_img, h, w, k, config.d_lat)

    state = adam_state(_codec_params(codec), lr=config.lr)
    order_rng = rng.spawn(1)
    curves = {"image_mse": [], "mask_ce": [], "vq": []}
    for _ in range(config.epochs):
        perm = order_rng.shuffle(n)
        ep = {"image_mse": 0.0, "mask_ce": 0.0, "vq": 0.0}
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            x = images[idx]
            m = masks[idx]
            values = _codec_params(codec)
            params = [Tensor(p, requires_grad=True) for p in values]
            sizes = [len(mm.parameters()) for mm in
                     (codec.enc_x, codec.dec_x, codec.enc_m, codec.dec_m)]
            o = np.cumsum([0] + sizes)
            book_t = params[-1] if config.use_vq else None
            try:
                z_x = forward(codec.enc_x, Tensor(x), mode="eval", params=params[o[0]:o[1]])
                z_m = forward(codec.enc_m, Tensor(m), mode="eval", params=params[o[2]:o[3]])
                vq_loss = None
                if config.use_vq:
                    z_x, cb1, cm1 = _vq_graph_terms(z_x, book_t, codec.book)
                    z_m, cb2, cm2 = _vq_graph_terms(z_m, book_t, codec.book)
                    vq_loss = (cb1 + cb2) + Tensor(config.lambda_commit) * (cm1 + cm2)
                x_hat = forward(codec.dec_x, z_x, mode="eval", params=params[o[1]:o[2]])
                logits = forward(codec.dec_m, z_m, mode="eval", params=params[o[3]:o[4]])
                img_loss = mean(square(x_hat - Tensor(x)))
                per_pixel = reshape(logits, (len(idx) * h * w, k))
                target = m.reshape(len(idx), k, h * w).transpose(0, 2, 1).reshape(-1, k)
                mask_loss = cross_entropy(per_pixel, target)
                loss = img_loss + mask_loss
                if vq_loss is not None:
                    loss = loss + vq_loss
                loss.backward()
                grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
                values, state = adam_step(state, values, grads)
            except (ArithmeticError, ValueError) as exc:
                raise DivergenceError(f"autoencoder training diverged: {exc}", codec) from exc
            codec = _codec_with_params(codec, values)
            ep["image_mse"] += img_loss.item()
            ep["mask_ce"] += mask_loss.item()
            ep["vq"] += vq_loss.item() if vq_loss is not None else 0.0
            batches += 1
        for key in curves:
            curves[key].append(ep[key] / batches)
    if config.use_vq and codec.book.collapse_pairs() > 0:
        warnings.warn("codebook collapse: duplicate entries after training", stacklevel=2)
    return codec, curves


def mask_pixel_accuracy(codec: PairedCodec, samples: list[PairedSample]) -> float:
    """Fraction of pixels whose decoded label matches, over a sample set."""
    masks = np.stack([s.mask.reshape(-1) for s in samples])
    z_m = predict(codec.enc_m, masks)
    if codec.book is not None:
        z_m, _, _ = quantize(z_m, codec.book)
    labels = decode_mask_labels(codec, z_m)
    truth = np.stack([np.argmax(s.mask, axis=0) for s in samples])
    return float(np.mean(labels == truth))


def presence_preservation(codec: PairedCodec, samples: list[PairedSample]) -> float:
    """Fraction of samples whose decoded presence set matches the original."""
    masks = np.stack([s.mask.reshape(-1) for s in samples])
    z_m = predict(codec.enc_m, masks)
    if codec.book is not None:
        z_m, _, _ = quantize(z_m, codec.book)
    labels = decode_mask_labels(codec, z_m)
    hits = 0
    for s, lab in zip(samples, labels):
        hits += frozenset(np.unique(lab).tolist()) == s.presence
    return hits / len(samples)


_MODEL_KEYS = ("enc_x", "dec_x", "enc_m", "dec_m")


def save_codec(codec: PairedCodec, directory) -> None:
    tensors = {}
    meta = {"c_img": codec.c_img, "h": codec.h, "w": codec.w, "k": codec.k,
            "d_lat": codec.d_lat, "compression_ratio": codec.compression_ratio,
            "models": {}}
    for key in _MODEL_KEYS:
        model: MlpModel = getattr(codec, key)
        meta["models"][key] = {"widths": list(model.widths), "dropout_p": model.dropout_p}
        for i, p in enumerate(model.parameters()):
            tensors[f"{key}.p{i}"] = p
    if codec.book is not None:
        tensors["book.entries"] = codec.book.entries
        meta["vocab"] = codec.book.entries.shape[0]
        meta["d_code"] = codec.book.entries.shape[1]
        meta["lambda_commit"] = codec.book.lambda_commit
    tensor_io.save_tensor_dict(directory, tensors, meta)


def load_codec(directory) -> PairedCodec:
    tensors, meta = tensor_io.load_tensor_dict(directory)
    models = {}
    for key in _MODEL_KEYS:
        spec = meta["models"][key]
        widths = tuple(spec["widths"])
        count = 2 * (len(widths) - 1)
        params = [tensors[f"{key}.p{i}"] for i in range(count)]
        models[key] = MlpModel(widths, tuple(params[0::2]), tuple(params[1::2]),
                               spec["dropout_p"])
    book = None
    if "book.entries" in tensors:
        book = Codebook(tensors["book.entries"], meta["lambda_commit"])
    return PairedCodec(models["enc_x"], models["dec_x"], models["enc_m"], models["dec_m"],
                       book, meta["c_img"], meta["h"], meta["w"], meta["k"], meta["d_lat"])
