"""Procedural datasets: an imbalanced two-class point cloud and a miniature
multi-class segmentation task with one deliberately rare class.

Both generators are pure functions of (spec, stream): regenerating with the
same seed is bit-identical. Splits are stratified 90/5/5 with exact global
sizes, apportioned per stratum by largest remainder so minority fractions
survive the split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autoencoder import PairedSample, make_paired_sample
from .rng import RngStream
from . import tensor_io

SPLIT_FRACTIONS = (0.9, 0.05, 0.05)
SPLIT_NAMES = ("train", "val", "test")


def stratified_split(group_ids: np.ndarray, rng: RngStream,
                     fractions=SPLIT_FRACTIONS) -> dict[str, np.ndarray]:
    """Index split with exact global sizes and per-group largest-remainder
    apportionment; groups are shuffled independently, so membership is
    deterministic given the stream."""
    group_ids = np.asarray(group_ids)
    n = group_ids.shape[0]
    targets = [int(np.floor(f * n)) for f in fractions[:-1]]
    targets.append(n - sum(targets))
    groups = [np.flatnonzero(group_ids == g) for g in np.unique(group_ids)]

    shares = np.array([[len(g) * f for f in fractions] for g in groups])
    counts = np.floor(shares).astype(int)
    remaining = np.array(targets) - counts.sum(axis=0)
    for gi, g in enumerate(groups):
        leftover = len(g) - counts[gi].sum()
        fracs = shares[gi] - np.floor(shares[gi])
        for si in np.argsort(-fracs, kind="stable"):
            if leftover == 0:
                break
            if remaining[si] > 0:
                counts[gi, si] += 1
                remaining[si] -= 1
                leftover -= 1
        # ties exhausted but quota left: any split with room takes it
        for si in range(len(fractions)):
            while leftover > 0 and remaining[si] > 0:
                counts[gi, si] += 1
                remaining[si] -= 1
                leftover -= 1

    parts: dict[str, list] = {name: [] for name in SPLIT_NAMES}
    for gi, g in enumerate(groups):
        perm = g[rng.shuffle(len(g))]
        at = 0
        for si, name in enumerate(SPLIT_NAMES):
            parts[name].append(perm[at : at + counts[gi, si]])
            at += counts[gi, si]
    return {name: np.sort(np.concatenate(parts[name])).astype(np.int64)
            for name in SPLIT_NAMES}


# -- two-class point cloud ---------------------------------------------------


@dataclass(frozen=True)
class Toy2DSpec:
    """Two noisy rings: class is radius > threshold, fixed counts per class."""

    n_per_class: tuple[int, int] = (900, 90)
    noise: float = 0.25
    threshold: float = 1.0
    r_max: float = 2.0

    @property
    def imbalance(self) -> float:
        return min(self.n_per_class) / max(self.n_per_class)

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not (0.0 < self.threshold < self.r_max):
            raise ValueError("need 0 < threshold < r_max")


@dataclass(frozen=True)
class Toy2DDataset:
    points: np.ndarray  # (N, 2)
    labels: np.ndarray  # (N,) in {0, 1}
    splits: dict
    spec: Toy2DSpec

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        ids = self.splits[name]
        return self.points[ids], self.labels[ids]


def gen_toy2d(spec: Toy2DSpec, rng: RngStream) -> Toy2DDataset:
    """Points on two radial bands (class = outside threshold, decided before
    noise is added), with a stratified 90/5/5 split."""
    if min(spec.n_per_class) < 20:
        raise ValueError("need at least 20 samples per class")
    gen = rng.spawn(0)
    pts, labels = [], []
    bands = ((0.25 * spec.threshold, 0.75 * spec.threshold),
             (1.25 * spec.threshold, spec.r_max))
    for cls, (lo, hi) in enumerate(bands):
        count = spec.n_per_class[cls]
        radii = lo + (hi - lo) * gen.uniform((count,))
        theta = 2.0 * np.pi * gen.uniform((count,))
        xy = np.stack([radii * np.cos(theta), radii * np.sin(theta)], axis=1)
        xy = xy + spec.noise * gen.gaussian((count, 2))
        pts.append(xy)
        labels.append(np.full(count, cls, dtype=np.int64))
    points = np.concatenate(pts)
    labels = np.concatenate(labels)
    splits = stratified_split(labels, rng.spawn(1))
    return Toy2DDataset(points, labels, splits, spec)


# -- miniature segmentation task ----------------------------------------------

SHAPE_KINDS = ("background", "disk", "bar", "rect")


@dataclass(frozen=True)
class ShapesSegSpec:
    """K-class painted shapes on an H x W grid; class 0 is background."""

    h: int = 8
    w: int = 8
    kinds: tuple = SHAPE_KINDS
    intensities: tuple = (0.1, 0.45, 0.7, 0.95)
    occurrence: tuple = (1.0, 0.85, 0.85, 0.05)
    noise: float = 0.03
    count: int = 2000

    @property
    def k(self) -> int:
        return len(self.kinds)

    def __post_init__(self):
        if not (len(self.kinds) == len(self.intensities) == len(self.occurrence)):
            raise ValueError("kinds/intensities/occurrence lengths disagree")
        if self.kinds[0] != "background" or self.occurrence[0] != 1.0:
            raise ValueError("class 0 must be background with occurrence 1.0")
        if min(self.h, self.w) < 4:
            raise ValueError(f"shapes do not fit in a {self.h}x{self.w} grid")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


@dataclass(frozen=True)
class ShapesSegDataset:
    samples: list
    splits: dict
    spec: ShapesSegSpec
    histogram: dict = field(default_factory=dict)  # train-split pixel counts

    def subset(self, name: str) -> list:
        return [self.samples[i] for i in self.splits[name]]


def _paint_disk(labels: np.ndarray, cls: int, rng: RngStream, h: int, w: int) -> None:
    cy = 1 + int(rng.integers(h - 3))
    cx = 1 + int(rng.integers(w - 3))
    r = 1.2 + 0.8 * float(rng.uniform())
    yy, xx = np.mgrid[0:h, 0:w]
    labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = cls


def _paint_bar(labels: np.ndarray, cls: int, rng: RngStream, h: int, w: int) -> None:
    horizontal = int(rng.integers(2)) == 0
    thickness = 1 + int(rng.integers(2))
    if horizontal:
        row = int(rng.integers(h - thickness + 1))
        labels[row : row + thickness, :] = cls
    else:
        col = int(rng.integers(w - thickness + 1))
        labels[:, col : col + thickness] = cls


def _paint_rect(labels: np.ndarray, cls: int, rng: RngStream, h: int, w: int) -> None:
    rh = 2 + int(rng.integers(2))
    rw = 2 + int(rng.integers(2))
    top = int(rng.integers(h - rh + 1))
    left = int(rng.integers(w - rw + 1))
    labels[top : top + rh, left : left + rw] = cls


_PAINTERS = {"disk": _paint_disk, "bar": _paint_bar, "rect": _paint_rect}


def _one_shapes_sample(spec: ShapesSegSpec, rng: RngStream) -> PairedSample:
    labels = np.zeros((spec.h, spec.w), dtype=np.int64)
    # painter's order: ascending class index, later classes overwrite
    for cls in range(1, spec.k):
        if float(rng.uniform()) < spec.occurrence[cls]:
            _PAINTERS[spec.kinds[cls]](labels, cls, rng, spec.h, spec.w)
    image = np.asarray(spec.intensities, dtype=np.float64)[labels]
    if spec.noise > 0:
        image = image + spec.noise * rng.gaussian((spec.h, spec.w))
    image = np.clip(image, 0.0, 1.0)
    mask = np.zeros((spec.k, spec.h, spec.w))
    np.put_along_axis(mask, labels[None, :, :], 1.0, axis=0)
    return make_paired_sample(image[None, :, :], mask)


def gen_shapes_seg(spec: ShapesSegSpec, rng: RngStream) -> ShapesSegDataset:
    """Painted-shape samples plus a split stratified on rare-class presence
    and the train-split pixel histogram used by frequency weighting."""
    samples = [_one_shapes_sample(spec, rng.spawn(i)) for i in range(spec.count)]
    rare = spec.k - 1
    strata = np.array([1 if rare in s.presence else 0 for s in samples])
    splits = stratified_split(strata, rng.spawn(spec.count))
    hist = {c: 0 for c in range(spec.k)}
    for i in splits["train"]:
        m = samples[i].mask
        for c in range(spec.k):
            hist[c] += int(m[c].sum())
    return ShapesSegDataset(samples, splits, spec, hist)


def stack_samples(samples: list) -> tuple[np.ndarray, np.ndarray]:
    """(N,C,H,W) images and (N,K,H,W) masks from a PairedSample list."""
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples])
    return images, masks


# -- persistence ---------------------------------------------------------------


def save_shapes_dataset(dataset: ShapesSegDataset, directory, seed_info: dict | None = None) -> None:
    images, masks = stack_samples(dataset.samples)
    tensors = {"images": images, "masks": masks}
    for name, ids in dataset.splits.items():
        tensors[f"split_{name}"] = ids.astype(np.float64)
    manifest = {
        "spec": {"h": dataset.spec.h, "w": dataset.spec.w,
                 "kinds": list(dataset.spec.kinds),
                 "intensities": list(dataset.spec.intensities),
                 "occurrence": list(dataset.spec.occurrence),
                 "noise": dataset.spec.noise, "count": dataset.spec.count},
        "histogram": {str(c): v for c, v in dataset.histogram.items()},
        "seed": seed_info or {},
    }
    tensor_io.save_tensor_dict(directory, tensors, manifest)


def load_shapes_dataset(directory) -> ShapesSegDataset:
    tensors, manifest = tensor_io.load_tensor_dict(directory)
    raw = manifest["spec"]
    spec = ShapesSegSpec(raw["h"], raw["w"], tuple(raw["kinds"]),
                         tuple(raw["intensities"]), tuple(raw["occurrence"]),
                         raw["noise"], raw["count"])
    images, masks = tensors["images"], tensors["masks"]
    samples = [make_paired_sample(images[i], masks[i]) for i in range(images.shape[0])]
    splits = {name: tensors[f"split_{name}"].astype(np.int64) for name in SPLIT_NAMES}
    hist = {int(c): int(v) for c, v in manifest["histogram"].items()}
    return ShapesSegDataset(samples, splits, spec, hist)
