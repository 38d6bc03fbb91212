"""DDPM core: variance schedules, forward noising, the joint-latent training
loss with conditioning dropout, classifier-free guidance, and the ancestral
reverse sampler.

Latents are modelled jointly: the image half and the mask half of a paired
latent are concatenated and denoised by one conditional model. Conditioning
is a class id embedded via a learned table with one extra null row; training
drops the condition to the null row with probability 0.2 so the model serves
both the conditional and unconditional branches of guidance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .nn import GradientError, MlpModel, adamw_state, adam_step, forward, init_mlp, predict
from .rng import RngStream
from .tensor import Tensor, concat_cols, matmul, mean, square

DEFAULT_COND_DROP = 0.2
DEFAULT_GUIDANCE = 3.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise levels: betas, alphas = 1 - betas, and their running product."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t) -> np.ndarray:
        """Vectorised lookup; t is 1-based."""
        return self.alpha_bars[np.asarray(t) - 1]

    def digest(self) -> str:
        return hashlib.md5(self.betas.tobytes()).hexdigest()


def make_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated betas, endpoints inclusive."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T, betas, alphas, alpha_bars)


def forward_noise(z0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noised latent sqrt(a_bar_t) z0 + sqrt(1 - a_bar_t) eps; t is 1-based.

    t may be a scalar or one value per leading row of z0.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {eps.shape} != z0 shape {z0.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ValueError(f"t out of range [1, {sched.T}]")
    a_bar = sched.alpha_bar(t_arr)
    if t_arr.ndim == 1:
        a_bar = a_bar.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(a_bar) * z0 + np.sqrt(1.0 - a_bar) * eps


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features of the (1-based) step index, standard frequencies."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass(frozen=True)
class ConditionalDenoiser:
    """Epsilon predictor over [noised latent | time features | class embedding]."""

    body: MlpModel
    class_emb: np.ndarray  # (n_classes + 1, emb_dim); last row is the null class
    n_classes: int
    latent_dim: int
    time_dim: int = 16

    @property
    def null_class(self) -> int:
        return self.n_classes

    @property
    def emb_dim(self) -> int:
        return self.class_emb.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return self.body.parameters() + [self.class_emb]

    def with_parameters(self, params: list[np.ndarray]) -> "ConditionalDenoiser":
        return replace(self, body=self.body.with_parameters(params[:-1]), class_emb=params[-1])

    def _cond_ids(self, c, n: int) -> np.ndarray:
        if c is None:
            return np.full(n, self.null_class, dtype=np.int64)
        ids = np.broadcast_to(np.asarray(c, dtype=np.int64), (n,)).copy()
        if np.any(ids < 0) or np.any(ids > self.null_class):
            raise ValueError(f"class id out of range [0, {self.null_class}]")
        return ids

    def predict(self, z: np.ndarray, t, c) -> np.ndarray:
        """Eval-mode epsilon prediction; c is a class id, id array, or None."""
        z = np.asarray(z, dtype=np.float64)
        n = z.shape[0]
        ids = self._cond_ids(c, n)
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        x = np.concatenate([z, time_embedding(t_arr, self.time_dim), self.class_emb[ids]], axis=1)
        return predict(self.body, x)

    def forward_graph(self, z_t: np.ndarray, t: np.ndarray, cond_ids: np.ndarray,
                      params: list[Tensor]) -> Tensor:
        """Training-mode graph; params follow parameters() order."""
        n = z_t.shape[0]
        one_hot = np.zeros((n, self.n_classes + 1))
        one_hot[np.arange(n), cond_ids] = 1.0
        emb = matmul(Tensor(one_hot), params[-1])
        x = concat_cols([Tensor(z_t), Tensor(time_embedding(t, self.time_dim)), emb])
        return forward(self.body, x, mode="eval", params=params[:-1])

    def digest(self) -> str:
        h = hashlib.md5()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()


def init_denoiser(n_classes: int, latent_dim: int, hidden, rng: RngStream,
                  emb_dim: int = 8, time_dim: int = 16) -> ConditionalDenoiser:
    widths = (latent_dim + time_dim + emb_dim, *hidden, latent_dim)
    body = init_mlp(widths, rng.spawn(0))
    class_emb = rng.spawn(1).gaussian((n_classes + 1, emb_dim))
    return ConditionalDenoiser(body, class_emb, n_classes, latent_dim, time_dim)


def loss_semantic(denoiser: ConditionalDenoiser, z_x0: np.ndarray, z_m0: np.ndarray,
                  c: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: NoiseSchedule,
                  rng: RngStream | None = None, drop_prob: float = DEFAULT_COND_DROP,
                  params: list[Tensor] | None = None) -> Tensor:
    """Mean squared error between eps and its prediction on the joint latent.

    With an rng, each row's condition is replaced by the null class with
    probability drop_prob (training mode); without one the conditions are
    used as given. With an empty mask half (z_m0 width 0) this is exactly
    the plain latent-denoising loss.
    """
    z_x0 = np.atleast_2d(np.asarray(z_x0, dtype=np.float64))
    z_m0 = np.atleast_2d(np.asarray(z_m0, dtype=np.float64))
    z0 = np.concatenate([z_x0, z_m0], axis=1)
    if z0.shape[1] != denoiser.latent_dim:
        raise ValueError(f"joint latent width {z0.shape[1]} != denoiser latent_dim {denoiser.latent_dim}")
    n = z0.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
    cond = denoiser._cond_ids(c, n)
    if rng is not None and drop_prob > 0.0:
        cond = np.where(rng.uniform((n,)) < drop_prob, denoiser.null_class, cond)
    z_t = forward_noise(z0, t, eps, sched)
    if params is None:
        params = [Tensor(p, requires_grad=True) for p in denoiser.parameters()]
    pred = denoiser.forward_graph(z_t, t, cond, params)
    return mean(square(pred - Tensor(eps)))


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, omega: float) -> np.ndarray:
    """Guided noise estimate (1 + omega) * conditional - omega * unconditional.

    Evaluated as cond + omega * (cond - uncond), which is the same expression
    but makes omega = 0 and cond == uncond reduce to cond exactly in floats.
    """
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_cond + omega * (eps_cond - eps_uncond)


class SamplingError(ArithmeticError):
    """Reverse sampling hit a non-finite state; .step holds the 1-based index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite sampler state at step t={step}")
        self.step = step


def reverse_sample(denoiser, sched: NoiseSchedule, c, omega: float,
                   rng: RngStream, n: int) -> np.ndarray:
    """Ancestral DDPM sampling of n joint latents, reverse-step variance beta_t.

    `denoiser` is anything with .predict(z, t, cond) and .latent_dim; when
    omega > 0 and c is not None, each step blends the conditional and
    null-conditioned predictions via cfg_combine.
    """
    if omega < 0:
        raise ValueError("omega must be >= 0")
    dim = denoiser.latent_dim
    z = rng.gaussian((n, dim))
    for t in range(sched.T, 0, -1):
        eps = denoiser.predict(z, t, c)
        if omega > 0.0 and c is not None:
            eps = cfg_combine(eps, denoiser.predict(z, t, None), omega)
        a_t = sched.alpha(t)
        b_t = sched.beta(t)
        a_bar = float(sched.alpha_bar(t))
        mean_z = (z - b_t / np.sqrt(1.0 - a_bar) * eps) / np.sqrt(a_t)
        if t > 1:
            z = mean_z + np.sqrt(b_t) * rng.gaussian((n, dim))
        else:
            z = mean_z
        if not np.all(np.isfinite(z)):
            raise SamplingError(t)
    return z


def sample_metadata(denoiser: ConditionalDenoiser, sched: NoiseSchedule, c, omega: float,
                    count: int, seed_info: tuple[int, int, int]) -> dict:
    return {
        "class_id": None if c is None else int(c),
        "omega": float(omega),
        "count": int(count),
        "seed": list(seed_info),
        "schedule_hash": sched.digest(),
        "checkpoint_hash": denoiser.digest(),
    }


@dataclass
class DiffusionTrainConfig:
    steps: int = 4000
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple[float, float] = (0.5, 0.999)
    weight_decay: float = 0.0
    drop_prob: float = DEFAULT_COND_DROP


def train_denoiser(denoiser: ConditionalDenoiser, z0: np.ndarray, cond: np.ndarray,
                   sched: NoiseSchedule, config: DiffusionTrainConfig,
                   rng: RngStream) -> tuple[ConditionalDenoiser, list[float]]:
    """AdamW training of the epsilon predictor on fixed latents z0 (N x 2d)."""
    z0 = np.asarray(z0, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.int64)
    n = z0.shape[0]
    d = z0.shape[1]
    state = adamw_state(denoiser.parameters(), lr=config.lr, betas=config.betas,
                        weight_decay=config.weight_decay)
    batch_rng = rng.spawn(0)
    noise_rng = rng.spawn(1)
    drop_rng = rng.spawn(2)
    losses: list[float] = []
    for _ in range(config.steps):
        idx = batch_rng.integers(n, (config.batch_size,))
        t = noise_rng.integers(sched.T, (config.batch_size,)) + 1
        eps = noise_rng.gaussian((config.batch_size, d))
        params = [Tensor(p, requires_grad=True) for p in denoiser.parameters()]
        loss = loss_semantic(denoiser, z0[idx, : d // 2], z0[idx, d // 2:], cond[idx],
                             t, eps, sched, rng=drop_rng, drop_prob=config.drop_prob,
                             params=params)
        loss.backward()
        grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
        try:
            values, state = adam_step(state, denoiser.parameters(), grads)
        except GradientError:
            raise GradientError(f"diffusion training diverged after {len(losses)} steps")
        denoiser = denoiser.with_parameters(values)
        losses.append(loss.item())
    return denoiser, losses
