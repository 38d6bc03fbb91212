"""Schedule, guidance, and sampler tests.

The heavier oracles here: a closed-form optimal epsilon predictor for 1-D
Gaussian data (the reverse chain must reproduce its mean and variance), and a
conditionally trained two-component mixture (guidance must steer samples to
the conditioned component).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gauda.diffusion import (DiffusionTrainConfig, SamplingError, cfg_combine,
                             forward_noise, init_denoiser, loss_semantic,
                             make_linear_schedule, reverse_sample, time_embedding,
                             train_denoiser)
from gauda.rng import RngStream
from gauda.tensor import Tensor


def test_alpha_bar_matches_brute_force_products():
    sched = make_linear_schedule(200, 1e-4, 0.02)
    running = 1.0
    for i in range(200):
        running *= 1.0 - sched.betas[i]
        assert abs(sched.alpha_bars[i] - running) < 1e-12


def test_schedule_endpoints_inclusive_and_monotone():
    sched = make_linear_schedule(100, 1e-4, 0.05)
    assert sched.betas[0] == pytest.approx(1e-4, abs=0)
    assert sched.betas[-1] == pytest.approx(0.05, abs=0)
    assert np.all(np.diff(sched.betas) > 0)
    assert np.all(np.diff(sched.alpha_bars) < 0)
    single = make_linear_schedule(1, 1e-3, 0.02)
    assert single.betas.tolist() == [1e-3]


@pytest.mark.parametrize("bad", [(0, 1e-4, 0.02), (10, 0.0, 0.02),
                                 (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_parameters(bad):
    with pytest.raises(ValueError):
        make_linear_schedule(*bad)


def test_forward_noise_monte_carlo_moments():
    sched = make_linear_schedule(200, 1e-4, 0.02)
    z0 = np.full((100_000, 1), 1.7)
    for t in (1, 80, 200):
        eps = RngStream(t).gaussian((100_000, 1))
        z_t = forward_noise(z0, t, eps, sched)
        a_bar = float(sched.alpha_bar(t))
        assert abs(z_t.mean() - np.sqrt(a_bar) * 1.7) < 0.02 * max(np.sqrt(a_bar) * 1.7, 0.1)
        assert abs(z_t.var() - (1.0 - a_bar)) < 0.02 * max(1.0 - a_bar, 0.05)


def test_forward_noise_vector_t_applies_per_row():
    sched = make_linear_schedule(50, 1e-3, 0.04)
    rng = RngStream(9)
    z0 = rng.gaussian((6, 3))
    eps = rng.gaussian((6, 3))
    t = np.array([1, 10, 20, 30, 40, 50])
    batched = forward_noise(z0, t, eps, sched)
    for i in range(6):
        row = forward_noise(z0[i:i + 1], int(t[i]), eps[i:i + 1], sched)
        np.testing.assert_array_equal(batched[i], row[0])


def test_forward_noise_validation():
    sched = make_linear_schedule(10, 1e-3, 0.02)
    z0 = np.zeros((2, 2))
    with pytest.raises(ValueError):
        forward_noise(z0, 0, np.zeros((2, 2)), sched)
    with pytest.raises(ValueError):
        forward_noise(z0, 11, np.zeros((2, 2)), sched)
    with pytest.raises(ValueError):
        forward_noise(z0, 1, np.zeros((2, 3)), sched)


def test_time_embedding_values_and_shape():
    emb = time_embedding([3.0], 16)
    assert emb.shape == (1, 16)
    assert emb[0, 0] == pytest.approx(np.sin(3.0), abs=1e-12)
    assert emb[0, 8] == pytest.approx(np.cos(3.0), abs=1e-12)
    assert np.all(np.abs(emb) <= 1.0)
    # distinct steps embed distinctly
    many = time_embedding(np.arange(1, 101), 16)
    assert np.unique(many, axis=0).shape[0] == 100


# -- guidance -----------------------------------------------------------------


@given(st.integers(0, 2**32), st.floats(0.0, 10.0))
@settings(max_examples=100, deadline=None)
def test_cfg_of_identical_branches_is_identity(seed, omega):
    a = RngStream(seed).gaussian((4, 3))
    assert np.array_equal(cfg_combine(a, a, omega), a)


@given(st.integers(0, 2**32))
@settings(max_examples=100, deadline=None)
def test_cfg_at_omega_zero_returns_conditional(seed):
    rng = RngStream(seed)
    a, b = rng.gaussian((3, 5)), rng.gaussian((3, 5))
    assert np.array_equal(cfg_combine(a, b, 0.0), a)


def test_cfg_extrapolates_beyond_conditional():
    cond = np.array([2.0])
    uncond = np.array([1.0])
    np.testing.assert_allclose(cfg_combine(cond, uncond, 3.0), [5.0], atol=1e-12)
    with pytest.raises(ValueError):
        cfg_combine(np.zeros(2), np.zeros(3), 1.0)


# -- reverse sampler ----------------------------------------------------------


MU, SIGMA = 2.0, 0.5


def analytic_schedule():
    return make_linear_schedule(200, 1e-4, 0.05)


class AnalyticDenoiser:
    """Closed-form optimal epsilon predictor for 1-D N(MU, SIGMA^2) data."""

    latent_dim = 1

    def __init__(self, sched):
        self.sched = sched

    def predict(self, z, t, c):
        a_bar = float(self.sched.alpha_bar(t))
        scale = np.sqrt(1.0 - a_bar) / (a_bar * SIGMA**2 + 1.0 - a_bar)
        return scale * (z - np.sqrt(a_bar) * MU)


def test_reverse_chain_recovers_gaussian_moments():
    sched = analytic_schedule()
    zs = reverse_sample(AnalyticDenoiser(sched), sched, None, 0.0, RngStream(42), 10_000)
    assert abs(zs.mean() - MU) / MU < 0.03
    assert abs(zs.var() - SIGMA**2) / SIGMA**2 < 0.05


def test_reverse_sampler_matches_manual_loop_bitwise():
    sched = make_linear_schedule(40, 1e-3, 0.05)
    den = init_denoiser(3, 4, (16,), RngStream(1))
    for omega, c in ((0.0, 1), (2.0, 2), (1.5, None)):
        got = reverse_sample(den, sched, c, omega, RngStream(77), 5)
        rng = RngStream(77)
        z = rng.gaussian((5, 4))
        for t in range(sched.T, 0, -1):
            eps = den.predict(z, t, c)
            if omega > 0.0 and c is not None:
                eps = eps + omega * (eps - den.predict(z, t, None))
            mean_z = (z - sched.beta(t) / np.sqrt(1.0 - float(sched.alpha_bar(t))) * eps)
            mean_z = mean_z / np.sqrt(sched.alpha(t))
            z = mean_z + np.sqrt(sched.beta(t)) * rng.gaussian((5, 4)) if t > 1 else mean_z
        np.testing.assert_array_equal(got, z)


def test_single_step_chain_is_noise_free_after_init():
    # T=1 consumes only the init draw: two identical streams agree bitwise
    sched = make_linear_schedule(1, 1e-3, 1e-3)
    den = init_denoiser(2, 2, (8,), RngStream(3))
    rng = RngStream(11)
    out = reverse_sample(den, sched, 0, 0.0, rng, 7)
    assert rng.counter == 2 * 7 * 2  # gaussian words for init only
    np.testing.assert_array_equal(out, reverse_sample(den, sched, 0, 0.0, RngStream(11), 7))


def test_reverse_sample_rejects_negative_omega():
    sched = make_linear_schedule(5, 1e-3, 0.02)
    with pytest.raises(ValueError):
        reverse_sample(init_denoiser(2, 2, (8,), RngStream(0)), sched, 0, -1.0, RngStream(1), 2)


def test_sampling_error_carries_step():
    class Exploder:
        latent_dim = 2

        def predict(self, z, t, c):
            return np.full_like(z, np.inf)

    sched = make_linear_schedule(30, 1e-3, 0.05)
    with pytest.raises(SamplingError) as err:
        reverse_sample(Exploder(), sched, None, 0.0, RngStream(0), 3)
    assert err.value.step == 30


def test_guided_mixture_sampling_lands_on_conditioned_component():
    centers = {0: np.array([-0.9, -0.9]), 1: np.array([0.9, 0.9])}
    sig = 0.3
    rng = RngStream(5)
    labels = rng.integers(2, (600,))
    z0 = np.stack([centers[int(c)] for c in labels]) + sig * rng.gaussian((600, 2))
    sched = make_linear_schedule(150, 1e-4, 0.05)
    den = init_denoiser(2, 2, (48, 48), RngStream(6))
    den, _ = train_denoiser(den, z0, labels, sched,
                            DiffusionTrainConfig(steps=800, batch_size=64), RngStream(7))
    for c in (0, 1):
        samples = reverse_sample(den, sched, c, 3.0, RngStream(100 + c), 400)
        hit = np.all(np.abs(samples - centers[c]) <= 3 * sig, axis=1).mean()
        assert hit >= 0.95


# -- training loss ------------------------------------------------------------


def test_full_conditioning_dropout_equals_null_conditioning():
    den = init_denoiser(3, 4, (12,), RngStream(2))
    rng = RngStream(4)
    zx, zm = rng.gaussian((6, 2)), rng.gaussian((6, 2))
    c = rng.integers(3, (6,))
    t = rng.integers(20, (6,)) + 1
    eps = rng.gaussian((6, 4))
    sched = make_linear_schedule(20, 1e-3, 0.05)
    dropped = loss_semantic(den, zx, zm, c, t, eps, sched, rng=RngStream(8), drop_prob=1.0)
    null = loss_semantic(den, zx, zm, None, t, eps, sched)
    assert dropped.item() == null.item()


def test_conditioning_dropout_rate_is_respected():
    den = init_denoiser(2, 2, (8,), RngStream(0))
    sched = make_linear_schedule(10, 1e-3, 0.05)
    n = 20_000
    rng = RngStream(1)
    ids = den._cond_ids(np.zeros(n, dtype=np.int64), n)
    drop_rng = RngStream(2)
    cond = np.where(drop_rng.uniform((n,)) < 0.2, den.null_class, ids)
    rate = (cond == den.null_class).mean()
    assert abs(rate - 0.2) < 3 * np.sqrt(0.2 * 0.8 / n)
    del rng, sched  # statistical check of the dropout rule itself


def test_loss_gradient_matches_finite_differences():
    from gauda.gradcheck import grad_check

    den = init_denoiser(2, 4, (10,), RngStream(12))
    rng = RngStream(13)
    zx, zm = rng.gaussian((5, 2)), rng.gaussian((5, 2))
    c = rng.integers(2, (5,))
    t = rng.integers(15, (5,)) + 1
    eps = rng.gaussian((5, 4))
    sched = make_linear_schedule(15, 1e-3, 0.05)
    shapes = [p.shape for p in den.parameters()]
    sizes = [int(np.prod(s)) for s in shapes]

    def f(theta):
        arrays, at = [], 0
        for shape, size in zip(shapes, sizes):
            arrays.append(theta[at:at + size].reshape(shape))
            at += size
        params = [Tensor(a, requires_grad=True) for a in arrays]
        loss = loss_semantic(den, zx, zm, c, t, eps, sched, params=params)
        loss.backward()
        grad = np.concatenate([p.grad.ravel() for p in params])
        return loss.item(), grad

    theta0 = np.concatenate([p.ravel() for p in den.parameters()])
    assert grad_check(f, theta0) < 1e-4


def test_loss_rejects_mismatched_latent_width():
    den = init_denoiser(2, 4, (8,), RngStream(0))
    sched = make_linear_schedule(10, 1e-3, 0.05)
    with pytest.raises(ValueError):
        loss_semantic(den, np.zeros((2, 3)), np.zeros((2, 3)), None, 1,
                      np.zeros((2, 6)), sched)


def test_denoiser_embeds_one_null_row_and_checks_ids():
    den = init_denoiser(4, 6, (8,), RngStream(1))
    assert den.class_emb.shape == (5, 8)
    assert den.null_class == 4
    with pytest.raises(ValueError):
        den.predict(np.zeros((1, 6)), 1, 5)


def test_train_denoiser_descends():
    rng = RngStream(21)
    z0 = rng.gaussian((300, 2)) * 0.3
    labels = np.zeros(300, dtype=np.int64)
    sched = make_linear_schedule(30, 1e-3, 0.05)
    den = init_denoiser(1, 2, (24,), rng.spawn(0))
    _, losses = train_denoiser(den, z0, labels, sched,
                               DiffusionTrainConfig(steps=400, batch_size=32),
                               rng.spawn(1))
    assert np.mean(losses[-50:]) < 0.7 * np.mean(losses[:50])
