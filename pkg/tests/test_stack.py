"""Generative-stack wiring: conditioning label assignment, class-balanced
pool cycling, latent standardization, synthesis determinism, and the
save/load round trip."""

import numpy as np
import pytest

from gauda.autoencoder import AEConfig, make_paired_sample
from gauda.data import ShapesSegSpec, gen_shapes_seg
from gauda.diffusion import DiffusionTrainConfig
from gauda.rng import RngStream
from gauda.stack import (StackConfig, balanced_conditioning, conditioning_fidelity,
                         conditioning_labels, load_stack, save_stack,
                         standardize_stats, synthesize_pairs, train_stack)


def tiny_sample(classes: set, k: int = 3):
    """2x2 sample whose mask uses each class in `classes` at least once."""
    order = sorted(classes)
    labels = np.zeros((2, 2), dtype=np.int64)
    for i, c in enumerate(order):
        labels[divmod(i, 2)] = c
    mask = np.zeros((k, 2, 2))
    np.put_along_axis(mask, labels[None], 1.0, axis=0)
    return make_paired_sample(np.zeros((1, 2, 2)), mask)


# -- conditioning -----------------------------------------------------------


def test_conditioning_labels_background_only_maps_to_zero():
    labels = conditioning_labels([tiny_sample({0}), tiny_sample({0, 2})], RngStream(0))
    assert labels[0] == 0
    assert labels[1] == 2


def test_conditioning_labels_uniform_over_present_foreground():
    samples = [tiny_sample({0, 1, 2})] * 400
    labels = conditioning_labels(samples, RngStream(1))
    counts = np.bincount(labels, minlength=3)
    assert counts[0] == 0
    # Binomial(400, 1/2): 3 sigma is 30
    assert abs(counts[1] - 200) <= 30


def test_conditioning_labels_deterministic():
    samples = [tiny_sample({0, 1}), tiny_sample({0, 1, 2}), tiny_sample({0, 2})]
    a = conditioning_labels(samples, RngStream(2))
    b = conditioning_labels(samples, RngStream(2))
    assert np.array_equal(a, b)


def test_balanced_conditioning_hand_case():
    samples = [tiny_sample({0, 1}), tiny_sample({0, 1}), tiny_sample({0, 1, 2})]
    latents = np.arange(6.0).reshape(3, 2)
    z, cond = balanced_conditioning(samples, latents)
    # pool(1) = rows 0,1,2; pool(2) = row 2 cycled to length 3
    assert np.array_equal(cond, [1, 1, 1, 2, 2, 2])
    assert np.array_equal(z, latents[[0, 1, 2, 2, 2, 2]])


def test_balanced_conditioning_background_pool():
    samples = [tiny_sample({0}), tiny_sample({0, 2})]
    z, cond = balanced_conditioning(samples, np.eye(2))
    assert np.array_equal(cond, [0, 2])
    assert np.array_equal(z, np.eye(2))


def test_balanced_conditioning_equalizes_counts():
    rng = RngStream(3)
    samples = []
    for _ in range(50):
        present = {0} | {c for c in (1, 2) if rng.uniform() < (0.9, 0.1)[c - 1]}
        samples.append(tiny_sample(present))
    z, cond = balanced_conditioning(samples, rng.gaussian((50, 4)))
    counts = {c: int((cond == c).sum()) for c in np.unique(cond)}
    assert len(set(counts.values())) == 1
    assert z.shape == (len(cond), 4)


def test_standardize_stats_guards_constant_columns():
    latents = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    mu, sd = standardize_stats(latents)
    assert np.array_equal(mu, [3.0, 5.0])
    assert sd[0] == pytest.approx(np.std([1.0, 3.0, 5.0]))
    assert sd[1] == 1.0


# -- trained stack ------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_stack():
    spec = ShapesSegSpec(h=4, w=4, kinds=("background", "disk"),
                         intensities=(0.1, 0.9), occurrence=(1.0, 0.8),
                         noise=0.02, count=60)
    ds = gen_shapes_seg(spec, RngStream(21))
    config = StackConfig(
        ae=AEConfig(d_lat=8, enc_hidden=(32,), dec_hidden=(32,), vocab=16,
                    d_code=4, epochs=60, batch_size=16),
        denoiser_hidden=(48, 48), balance=True,
        diffusion=DiffusionTrainConfig(steps=600, batch_size=32))
    stack, report = train_stack(ds.subset("train"), config, RngStream(22))
    return stack, report


def test_train_stack_report(tiny_stack):
    stack, report = tiny_stack
    assert report["diffusion_loss_last"] < report["diffusion_loss_first"]
    assert 0.0 <= report["presence_preservation"] <= 1.0
    assert report["compression_ratio"] == (1 + 2) * 16 / (2 * 8)
    assert stack.n_classes == 2


def test_synthesize_pairs_are_valid_samples(tiny_stack):
    stack, _ = tiny_stack
    samples, dropped = synthesize_pairs(stack, 1, 8, 3.0, RngStream(23))
    assert len(samples) + dropped == 8
    for s in samples:
        assert s.image.shape == (1, 4, 4)
        assert s.mask.shape == (2, 4, 4)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert np.all(s.mask.sum(axis=0) == 1.0)


def test_synthesize_zero_count(tiny_stack):
    stack, _ = tiny_stack
    assert synthesize_pairs(stack, 1, 0, 3.0, RngStream(0)) == ([], 0)


def test_synthesis_deterministic(tiny_stack):
    stack, _ = tiny_stack
    a, _ = synthesize_pairs(stack, 1, 4, 3.0, RngStream(24))
    b, _ = synthesize_pairs(stack, 1, 4, 3.0, RngStream(24))
    assert len(a) == len(b)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image)
        assert np.array_equal(sa.mask, sb.mask)


def test_conditioning_fidelity_bounds(tiny_stack):
    stack, _ = tiny_stack
    fid = conditioning_fidelity(stack, 1, 12, 3.0, RngStream(25))
    assert 0.0 <= fid <= 1.0


def test_stack_round_trip(tiny_stack, tmp_path):
    stack, _ = tiny_stack
    save_stack(stack, tmp_path / "stack")
    back = load_stack(tmp_path / "stack")
    assert back.digest() == stack.digest()
    assert np.array_equal(back.sched.betas, stack.sched.betas)
    assert np.array_equal(back.sched.alpha_bars, stack.sched.alpha_bars)
    a, _ = synthesize_pairs(stack, 1, 3, 2.0, RngStream(26))
    b, _ = synthesize_pairs(back, 1, 3, 2.0, RngStream(26))
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image)
        assert np.array_equal(sa.mask, sb.mask)
