"""The full generative stack: paired autoencoders, latent standardization,
and the conditional denoiser, wired for synthesis.

Encoders produce continuous latents; the diffusion model is trained on their
standardized joint view so its starting prior matches the latent scale. At
synthesis time latents are de-standardized, pushed through the codebook (when
quantization is on) and decoded into (image, mask) pairs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import (AEConfig, PairedCodec, PairedLatent, decode_pair, encode_batch,
                          load_codec, mask_pixel_accuracy, presence_preservation,
                          quantize, save_codec, train_autoencoders)
from .data import stack_samples
from .diffusion import (ConditionalDenoiser, DiffusionTrainConfig, NoiseSchedule,
                        init_denoiser, make_linear_schedule, reverse_sample,
                        train_denoiser)
from .nn import MlpModel
from .rng import RngStream
from . import tensor_io


@dataclass
class StackConfig:
    ae: AEConfig = field(default_factory=AEConfig)
    timesteps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.05
    denoiser_hidden: tuple = (96, 96)
    emb_dim: int = 8
    time_dim: int = 16
    balance: bool = False
    diffusion: DiffusionTrainConfig = field(default_factory=DiffusionTrainConfig)


@dataclass(frozen=True)
class GenerativeStack:
    codec: PairedCodec
    sched: NoiseSchedule
    denoiser: ConditionalDenoiser
    latent_mean: np.ndarray  # (2 d_lat,)
    latent_sd: np.ndarray  # (2 d_lat,)

    @property
    def n_classes(self) -> int:
        return self.codec.k

    def digest(self) -> str:
        h = hashlib.md5()
        for p in self.denoiser.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
        h.update(self.latent_mean.tobytes())
        h.update(self.latent_sd.tobytes())
        h.update(self.sched.betas.tobytes())
        return h.hexdigest()


def conditioning_labels(samples, rng: RngStream) -> np.ndarray:
    """One training condition per sample: uniform over its present foreground
    classes, or background when nothing else is present."""
    out = np.zeros(len(samples), dtype=np.int64)
    draws = rng.uniform((len(samples),))
    for i, s in enumerate(samples):
        fg = sorted(c for c in s.presence if c != 0)
        if fg:
            out[i] = fg[int(draws[i] * len(fg))]
    return out


def balanced_conditioning(samples, latents: np.ndarray):
    """Class-balanced (latent, condition) rows: each present class gets a pool
    of the samples containing it, cycled out to the largest pool's size. Rare
    conditionals would otherwise sit below the conditioning-dropout floor and
    never converge."""
    pools: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        fg = [int(c) for c in s.presence if c != 0]
        for c in (fg if fg else [0]):
            pools.setdefault(c, []).append(i)
    target = max(len(v) for v in pools.values())
    rows, labels = [], []
    for c in sorted(pools):
        cycled = np.resize(np.asarray(pools[c], dtype=np.int64), target)
        rows.append(cycled)
        labels.append(np.full(target, c, dtype=np.int64))
    return latents[np.concatenate(rows)], np.concatenate(labels)


def standardize_stats(latents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = latents.mean(axis=0)
    sd = latents.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    return mu, sd


def train_stack(train_samples, config: StackConfig, rng: RngStream):
    """Stagewise pre-training: autoencoders first, then the denoiser on the
    frozen standardized latents. Returns (stack, report)."""
    codec, curves = train_autoencoders(train_samples, config.ae, rng.spawn(0))
    images, masks = stack_samples(train_samples)
    latents = encode_batch(codec, images, masks)
    mu, sd = standardize_stats(latents)
    z0 = (latents - mu) / sd
    if config.balance:
        z0, cond = balanced_conditioning(train_samples, z0)
    else:
        cond = conditioning_labels(train_samples, rng.spawn(1))
    sched = make_linear_schedule(config.timesteps, config.beta_start, config.beta_end)
    denoiser = init_denoiser(codec.k, 2 * config.ae.d_lat, config.denoiser_hidden,
                             rng.spawn(2), emb_dim=config.emb_dim,
                             time_dim=config.time_dim)
    denoiser, losses = train_denoiser(denoiser, z0, cond, sched, config.diffusion,
                                      rng.spawn(3))
    stack = GenerativeStack(codec, sched, denoiser, mu, sd)
    report = {
        "ae_curves": curves,
        "diffusion_loss_first": losses[0] if losses else None,
        "diffusion_loss_last": float(np.mean(losses[-50:])) if losses else None,
        "mask_pixel_accuracy": mask_pixel_accuracy(codec, train_samples),
        "presence_preservation": presence_preservation(codec, train_samples),
        "compression_ratio": codec.compression_ratio,
    }
    return stack, report


def synthesize_pairs(stack: GenerativeStack, class_id, count: int, omega: float,
                     rng: RngStream):
    """count (image, mask) pairs conditioned on class_id; returns (samples,
    dropped) where dropped counts latents whose decode failed validation."""
    if count < 1:
        return [], 0
    z = reverse_sample(stack.denoiser, stack.sched, class_id, omega, rng, count)
    z = z * stack.latent_sd + stack.latent_mean
    d = stack.codec.d_lat
    z_x, z_m = z[:, :d], z[:, d:]
    if stack.codec.book is not None:
        z_x, _, _ = quantize(z_x, stack.codec.book)
        z_m, _, _ = quantize(z_m, stack.codec.book)
    samples, dropped = [], 0
    for i in range(count):
        try:
            samples.append(decode_pair(stack.codec, PairedLatent(z_x[i], z_m[i])))
        except ValueError:
            dropped += 1
    return samples, dropped


def conditioning_fidelity(stack: GenerativeStack, class_id: int, count: int,
                          omega: float, rng: RngStream) -> float:
    """Fraction of synthesized samples whose decoded mask contains class_id."""
    samples, dropped = synthesize_pairs(stack, class_id, count, omega, rng)
    if not samples:
        return 0.0
    hits = sum(1 for s in samples if class_id in s.presence)
    return hits / (len(samples) + dropped)


def save_stack(stack: GenerativeStack, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_codec(stack.codec, directory / "codec")
    tensors = {"class_emb": stack.denoiser.class_emb,
               "latent_mean": stack.latent_mean, "latent_sd": stack.latent_sd,
               "betas": stack.sched.betas}
    for i, p in enumerate(stack.denoiser.body.parameters()):
        tensors[f"body.p{i}"] = p
    manifest = {
        "body_widths": list(stack.denoiser.body.widths),
        "n_classes": stack.denoiser.n_classes,
        "latent_dim": stack.denoiser.latent_dim,
        "time_dim": stack.denoiser.time_dim,
        "digest": stack.digest(),
    }
    tensor_io.save_tensor_dict(directory / "denoiser", tensors, manifest)


def load_stack(directory) -> GenerativeStack:
    directory = Path(directory)
    codec = load_codec(directory / "codec")
    tensors, meta = tensor_io.load_tensor_dict(directory / "denoiser")
    widths = tuple(meta["body_widths"])
    count = 2 * (len(widths) - 1)
    params = [tensors[f"body.p{i}"] for i in range(count)]
    body = MlpModel(widths, tuple(params[0::2]), tuple(params[1::2]), 0.0)
    denoiser = ConditionalDenoiser(body, tensors["class_emb"], meta["n_classes"],
                                   meta["latent_dim"], meta["time_dim"])
    betas = tensors["betas"]
    sched = NoiseSchedule(betas.shape[0], betas, 1.0 - betas, np.cumprod(1.0 - betas))
    return GenerativeStack(codec, sched, denoiser, tensors["latent_mean"],
                           tensors["latent_sd"])
