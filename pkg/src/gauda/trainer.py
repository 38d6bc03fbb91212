"""Training orchestration: weighted-batch ensemble training with optional
classic augmentation, adaptive-sampling policies, and the uncertainty-guided
synthesis loop (train, measure class uncertainty at validation rounds,
synthesize for the most uncertain classes, mix synthetic samples into
subsequent batches).

All randomness flows from one root seed through named child streams, so runs
are replayable and resumable: checkpoints written at validation boundaries
record parameters, optimizer moments, stream counters, pool contents, and the
metrics logged so far.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autoencoder import PairedSample, make_paired_sample, mask_from_argmax
from .data import ShapesSegDataset, Toy2DDataset
from .ensemble import (EnsembleModel, class_uncertainty, init_ensemble, load_ensemble,
                       mean_prediction, predict_posterior, save_ensemble)
from .metrics import RunMetrics, aggregate, ap_per_label, dice_per_label, iou_per_label
from .nn import adam_state, adam_step, cross_entropy, forward
from .rng import RngStream
from .sampling import (ClassWeights, draw_batch, freq_weights, score_adaptive_update,
                       uncertainty_adaptive_update, uniform_weights)
from .stack import synthesize_pairs
from .tensor import Tensor, reshape
from . import tensor_io

BASE_POLICIES = ("none", "freq", "AS", "UE", "GAUDA")
AUG_PROB = 0.2


class TrainingError(RuntimeError):
    """Non-finite loss or gradients mid-run; message carries step diagnostics."""


@dataclass
class GaudaConfig:
    """Resolved knobs for one training run; policy strings compose a base
    strategy with "+aug" (classic transforms at probability 0.2 each)."""

    policy: str = "none"
    total_steps: int = 600
    val_interval: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    k_members: int = 4
    hidden: tuple = (64,)
    dropout_p: float = 0.0
    n_c: int = 2
    omega: float = 3.0
    synth_batch: int = 12
    replace_fraction: float = 0.25
    eta: float = 0.05
    weight_mode: str = "mean"
    pool_factor: int = 4

    def __post_init__(self):
        if not (0.0 <= self.replace_fraction <= 1.0):
            raise ValueError("replace_fraction must lie in [0, 1]")
        if self.val_interval < 1 or self.total_steps < 1:
            raise ValueError("steps must be positive")
        base, _ = parse_policy(self.policy)
        if base not in BASE_POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")


def parse_policy(policy: str) -> tuple[str, bool]:
    parts = policy.split("+")
    aug = "aug" in parts[1:] or policy == "aug"
    base = "none" if policy == "aug" else parts[0]
    return base, aug


def config_to_json(config: GaudaConfig, seed: int) -> str:
    payload = asdict(config)
    payload["hidden"] = list(config.hidden)
    payload["seed"] = seed
    return json.dumps(payload, indent=2, sort_keys=True)


def config_from_json(text: str) -> tuple[GaudaConfig, int]:
    payload = json.loads(text)
    seed = payload.pop("seed")
    payload["hidden"] = tuple(payload["hidden"])
    return GaudaConfig(**payload), seed


# -- synthetic-sample pool ---------------------------------------------------


class SynthPool:
    """FIFO pool of synthetic samples with provenance tags."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.items: list[tuple[PairedSample, dict]] = []

    def __len__(self) -> int:
        return len(self.items)

    def add(self, samples, round_idx: int, class_id: int) -> None:
        for s in samples:
            if class_id not in range(s.mask.shape[0]):
                raise ValueError("conditioning class outside mask range")
            self.items.append((s, {"round": round_idx, "class": int(class_id)}))
        overflow = len(self.items) - self.capacity
        if overflow > 0:
            self.items = self.items[overflow:]

    def get(self, index: int) -> PairedSample:
        return self.items[index][0]

    def manifest(self) -> dict:
        return {"size": len(self.items), "capacity": self.capacity,
                "items": [meta for _, meta in self.items]}


def select_uncertain_classes(ue: dict, n_c: int) -> list[int]:
    """Top n_c classes by uncertainty, descending; the absent sentinel ranks
    above every finite value; ties break toward the lower class index."""
    if not ue:
        raise ValueError("empty uncertainty map")
    ranked = sorted(ue.items(),
                    key=lambda kv: (-kv[1] if math.isfinite(kv[1]) else -math.inf, kv[0]))
    return [c for c, _ in ranked[:n_c]]


def synthesize_for_classes(classes, total_count: int, omega: float, synthesizer,
                           rng: RngStream):
    """Split total_count evenly over the classes (remainder to the most
    uncertain) and synthesize per class; returns (additions, dropped)."""
    additions: list[tuple[PairedSample, int]] = []
    dropped = 0
    if total_count < 1 or not classes:
        return additions, dropped
    base = total_count // len(classes)
    extra = total_count - base * len(classes)
    for rank, class_id in enumerate(classes):
        count = base + (1 if rank < extra else 0)
        if count == 0:
            continue
        samples, bad = synthesizer(class_id, count, omega, rng.spawn(class_id))
        dropped += bad
        additions.extend((s, class_id) for s in samples)
    return additions, dropped


def mix_batch(batch_ids, pool: SynthPool, r: float, rng: RngStream) -> list:
    """Independently replace each slot with a uniform pool draw at probability
    r; returns ("data", id) / ("pool", index) refs. An empty pool leaves the
    batch untouched (draws are still consumed, keeping streams aligned)."""
    if not (0.0 <= r <= 1.0):
        raise ValueError("replace fraction must lie in [0, 1]")
    refs = [ref if isinstance(ref, tuple) else ("data", int(ref)) for ref in batch_ids]
    coins = rng.uniform((len(refs),))
    out = []
    for ref, coin in zip(refs, coins):
        if coin < r and len(pool) > 0:
            out.append(("pool", int(rng.integers(len(pool)))))
        else:
            out.append(ref)
    return out


# -- synthesizers -------------------------------------------------------------


class StackSynthesizer:
    """Conditional synthesis from a trained generative stack."""

    def __init__(self, stack):
        self.stack = stack

    def __call__(self, class_id, count, omega, rng):
        return synthesize_pairs(self.stack, class_id, count, omega, rng)


class OracleHoldback:
    """Returns held-back real samples containing the requested class: the
    plumbing-correctness oracle, independent of generative quality."""

    def __init__(self, samples):
        if not samples:
            raise ValueError("empty holdback set")
        self.samples = list(samples)
        self.by_class: dict[int, list[int]] = {}
        for i, s in enumerate(self.samples):
            for c in s.presence:
                self.by_class.setdefault(int(c), []).append(i)

    def __call__(self, class_id, count, omega, rng):
        candidates = self.by_class.get(int(class_id))
        if not candidates:
            candidates = list(range(len(self.samples)))
        picks = rng.integers(len(candidates), (count,))
        return [self.samples[candidates[int(j)]] for j in picks], 0


class EchoSynthesizer:
    """Ignores the condition and echoes uniform real samples (degenerate
    generator for protocol sanity checks)."""

    def __init__(self, samples):
        if not samples:
            raise ValueError("empty sample set")
        self.samples = list(samples)

    def __call__(self, class_id, count, omega, rng):
        picks = rng.integers(len(self.samples), (count,))
        return [self.samples[int(j)] for j in picks], 0


# -- augmentation -------------------------------------------------------------


def augment_pair(image: np.ndarray, mask: np.ndarray, rng: RngStream):
    """Label-exact transforms for one-hot grids: horizontal flip and 90-degree
    rotations, each at probability 0.2."""
    if float(rng.uniform()) < AUG_PROB:
        image = image[:, :, ::-1]
        mask = mask[:, :, ::-1]
    if float(rng.uniform()) < AUG_PROB:
        k = 1 + int(rng.integers(3))
        image = np.rot90(image, k, axes=(1, 2))
        mask = np.rot90(mask, k, axes=(1, 2))
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def augment_point(x: np.ndarray, rng: RngStream) -> np.ndarray:
    """Label-exact transforms for radial data: rotation about the origin and
    reflection, each at probability 0.2."""
    x = x.copy()
    if float(rng.uniform()) < AUG_PROB:
        theta = 2.0 * np.pi * float(rng.uniform())
        c, s = np.cos(theta), np.sin(theta)
        x = np.array([c * x[0] - s * x[1], s * x[0] + c * x[1]])
    if float(rng.uniform()) < AUG_PROB:
        x = np.array([-x[0], x[1]])
    return x


# -- task adapters ------------------------------------------------------------


class _SegTask:
    kind = "segmentation"

    def __init__(self, dataset: ShapesSegDataset):
        self.dataset = dataset
        self.train = dataset.subset("train")
        self.val = dataset.subset("val")
        self.test = dataset.subset("test")
        self.k = dataset.spec.k
        self.h, self.w = dataset.spec.h, dataset.spec.w
        self.presence_train = [s.presence for s in self.train]
        self.histogram = dict(dataset.histogram)
        self.val_x = np.stack([s.image.reshape(-1) for s in self.val])
        self.test_x = np.stack([s.image.reshape(-1) for s in self.test])

    def member_widths(self, hidden) -> tuple:
        c = self.train[0].image.shape[0]
        return (c * self.h * self.w, *hidden, self.h * self.w * self.k)

    def init_ensemble(self, config: GaudaConfig, rng: RngStream) -> EnsembleModel:
        return init_ensemble(config.k_members, self.member_widths(config.hidden),
                             "segmentation", self.k, rng, config.dropout_p,
                             self.h, self.w)

    def batch(self, refs, pool: SynthPool, aug: bool, aug_rng: RngStream):
        xs, rows = [], []
        for src, idx in refs:
            s = self.train[idx] if src == "data" else pool.get(idx)
            image, mask = s.image, s.mask
            if aug:
                image, mask = augment_pair(image, mask, aug_rng)
            xs.append(image.reshape(-1))
            rows.append(mask.transpose(1, 2, 0).reshape(-1, self.k))
        return np.stack(xs), np.concatenate(rows)

    def to_rows(self, out: Tensor, b: int) -> Tensor:
        return reshape(out, (b * self.h * self.w, self.k))

    def val_metrics(self, ens: EnsembleModel):
        ps = predict_posterior(ens, self.val_x)
        m_final = mean_prediction(ps)
        labels = np.argmax(m_final, axis=-1).reshape(len(self.val), self.h, self.w)
        per_sample = []
        for j, s in enumerate(self.val):
            pred = _onehot_from_labels(labels[j], self.k)
            per_sample.append(iou_per_label(pred, s.mask))
        scores = {}
        for c in range(self.k):
            vals = [d[c] for d in per_sample if d[c] is not None]
            # a label never defined on the validation split scores 0: the
            # adaptive policies should treat invisible classes as failing
            scores[c] = float(np.mean(vals)) if vals else 0.0
        overall = float(np.mean(list(scores.values())))
        return scores, class_uncertainty(ps, m_final), overall

    def test_metrics(self, ens: EnsembleModel):
        ps = predict_posterior(ens, self.test_x)
        m_final = mean_prediction(ps)  # (M, HW, K)
        labels = np.argmax(m_final, axis=-1).reshape(len(self.test), self.h, self.w)
        per_sample = {"iou": [], "dice": [], "ap": []}
        for j, s in enumerate(self.test):
            pred = _onehot_from_labels(labels[j], self.k)
            probs = m_final[j].T.reshape(self.k, self.h, self.w)
            per_sample["iou"].append(iou_per_label(pred, s.mask))
            per_sample["dice"].append(dice_per_label(pred, s.mask))
            per_sample["ap"].append(ap_per_label(probs, s.mask))
        return per_sample


class _ClsTask:
    kind = "classification"

    def __init__(self, dataset: Toy2DDataset):
        self.k = int(dataset.labels.max()) + 1
        self.train_x, self.train_y = dataset.subset("train")
        self.val_x, self.val_y = dataset.subset("val")
        self.test_x, self.test_y = dataset.subset("test")
        self.train_x = self.train_x.copy()
        self.train_y = self.train_y.copy()
        self.presence_train = [frozenset([int(y)]) for y in self.train_y]
        counts = np.bincount(self.train_y, minlength=self.k)
        self.histogram = {c: int(counts[c]) for c in range(self.k)}

    @property
    def train(self):
        return self.train_x

    def member_widths(self, hidden) -> tuple:
        return (self.train_x.shape[1], *hidden, self.k)

    def init_ensemble(self, config: GaudaConfig, rng: RngStream) -> EnsembleModel:
        return init_ensemble(config.k_members, self.member_widths(config.hidden),
                             "classification", self.k, rng, config.dropout_p)

    def extend(self, xs: np.ndarray, ys: np.ndarray) -> None:
        self.train_x = np.concatenate([self.train_x, xs])
        self.train_y = np.concatenate([self.train_y, ys])
        self.presence_train.extend(frozenset([int(y)]) for y in ys)
        for y in ys:
            self.histogram[int(y)] += 1

    def batch(self, refs, pool, aug: bool, aug_rng: RngStream):
        xs, rows = [], []
        for _, idx in refs:  # no pool source for point tasks
            x = self.train_x[idx]
            if aug:
                x = augment_point(x, aug_rng)
            xs.append(x)
            one_hot = np.zeros(self.k)
            one_hot[self.train_y[idx]] = 1.0
            rows.append(one_hot)
        return np.stack(xs), np.stack(rows)

    def to_rows(self, out: Tensor, b: int) -> Tensor:
        return out

    def val_metrics(self, ens: EnsembleModel):
        ps = predict_posterior(ens, self.val_x)
        m_final = mean_prediction(ps)
        pred = np.argmax(m_final, axis=-1)
        scores = {}
        for c in range(self.k):
            chosen = self.val_y == c
            scores[c] = float(np.mean(pred[chosen] == c)) if np.any(chosen) else 0.0
        overall = float(np.mean(pred == self.val_y))
        return scores, class_uncertainty(ps, m_final), overall

    def test_metrics(self, ens: EnsembleModel):
        ps = predict_posterior(ens, self.test_x)
        pred = np.argmax(mean_prediction(ps), axis=-1)
        return {"accuracy": (pred == self.test_y).astype(np.float64).tolist()}


_onehot_from_labels = mask_from_argmax


# -- the loop -------------------------------------------------------------------


@dataclass
class RunResult:
    metrics: RunMetrics
    events: list
    per_sample: dict
    test_aggregates: dict
    ensemble: EnsembleModel
    pool_manifest: dict
    config: GaudaConfig
    seed: int


class _Streams:
    """Named child streams derived from the run seed; counters exportable so
    checkpoints can restore mid-run randomness exactly."""

    NAMES = ("batch", "drop", "mix", "aug")

    def __init__(self, seed: int, k: int):
        self.seed = seed
        root = RngStream(seed)
        self.named: dict[str, RngStream] = {"init": root.spawn(0)}
        members = root.spawn(1)
        for i in range(k):
            member = members.spawn(i)
            for tag, name in enumerate(self.NAMES):
                self.named[f"m{i}.{name}"] = member.spawn(tag)
        self.named["synth"] = root.spawn(2)
        self.named["grow"] = root.spawn(3)

    def __getitem__(self, name: str) -> RngStream:
        return self.named[name]

    def member(self, i: int, name: str) -> RngStream:
        return self.named[f"m{i}.{name}"]

    def export(self) -> dict:
        return {name: [s.stream_id, s.counter] for name, s in self.named.items()}

    def restore(self, counters: dict) -> None:
        for name, (stream_id, counter) in counters.items():
            self.named[name] = RngStream(self.seed, stream_id, counter)


def _member_update(member, state, x, target_rows, task, drop_rng):
    params = [Tensor(p, requires_grad=True) for p in member.parameters()]
    out = forward(member, x, mode="train", rng=drop_rng, params=params)
    rows = task.to_rows(out, x.shape[0])
    loss = cross_entropy(rows, target_rows)
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
    values, state = adam_step(state, member.parameters(), grads)
    return member.with_parameters(values), state, loss.item()


def _initial_weights(base: str, task) -> ClassWeights:
    if base == "freq":
        return freq_weights(task.histogram)
    return uniform_weights(range(task.k))


def _update_weights(base: str, weights: ClassWeights, scores: dict, ue: dict,
                    eta: float) -> ClassWeights:
    if base == "AS":
        return score_adaptive_update(weights, scores, eta)
    if base == "UE":
        return uncertainty_adaptive_update(weights, ue, eta)
    return weights


def run_training(dataset, config: GaudaConfig, seed: int, synthesizer=None,
                 out_dir=None, resume: bool = False,
                 grow: str = "none") -> RunResult:
    """Execute one policy run to total_steps and compute test metrics once.

    `dataset` is a segmentation or point dataset (split 90/5/5 upstream);
    `synthesizer(class_id, count, omega, rng)` backs the synthesis policy;
    `grow` ("none" | "pretrain" | "online") adds transformed real samples
    before or during training, sized to double the train split overall.
    """
    task = _SegTask(dataset) if isinstance(dataset, ShapesSegDataset) else _ClsTask(dataset)
    base, aug = parse_policy(config.policy)
    if config.n_c > task.k:
        raise ValueError(f"n_c {config.n_c} exceeds {task.k} classes")
    fell_back = base == "GAUDA" and synthesizer is None
    if fell_back:
        base = "AS"

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None and resume:
        done = _load_complete_run(out_path, config, seed, task)
        if done is not None:
            return done

    streams = _Streams(seed, config.k_members)
    ens = task.init_ensemble(config, streams["init"]).mark_trained()
    states = [adam_state(m.parameters(), lr=config.lr) for m in ens.members]
    weights = _initial_weights(base, task)
    pool = SynthPool(config.pool_factor * max(config.synth_batch, 1))
    metrics = RunMetrics()
    events: list[str] = []
    start_step = 0
    if fell_back:
        events.append("warning: GAUDA requested without a generative stack, using AS")

    rounds = config.total_steps // config.val_interval
    initial_count = len(task.presence_train)
    grow_added: list[int] = []
    loaded = None
    if out_path is not None and resume:
        loaded = _load_checkpoint(out_path, config, seed, task, streams)
    if loaded is not None:
        ens, states, weights, pool, metrics, events, start_step, grow_added = loaded
    elif grow == "pretrain":
        grow_added += _grow_dataset(task, initial_count, streams["grow"])
        events.append(f"pretrain growth: added {len(grow_added)} samples")

    gauda_active = base == "GAUDA"
    for step in range(start_step + 1, config.total_steps + 1):
        for i in range(config.k_members):
            ids = draw_batch(task.presence_train, weights, config.batch_size,
                             streams.member(i, "batch"), config.weight_mode)
            refs = [("data", int(j)) for j in ids]
            if gauda_active:
                refs = mix_batch(refs, pool, config.replace_fraction,
                                 streams.member(i, "mix"))
            x, target = task.batch(refs, pool, aug, streams.member(i, "aug"))
            try:
                member, states[i], loss = _member_update(
                    ens.members[i], states[i], x, target, task,
                    streams.member(i, "drop"))
            except ArithmeticError as exc:
                raise TrainingError(
                    f"non-finite loss at step {step}, member {i}: {exc}") from exc
            ens = ens.with_member(i, member)

        if step % config.val_interval == 0:
            round_idx = step // config.val_interval
            scores, ue, overall = task.val_metrics(ens)
            weights = _update_weights(base, weights, scores, ue, config.eta)
            selected = select_uncertain_classes(ue, config.n_c)
            events.append(f"step {step}: top uncertain classes {selected}")
            if gauda_active and config.synth_batch > 0:
                additions, dropped = synthesize_for_classes(
                    selected, config.synth_batch, config.omega, synthesizer,
                    streams["synth"].spawn(round_idx))
                for sample, class_id in additions:
                    pool.add([sample], round_idx, class_id)
                events.append(
                    f"step {step}: synthesized {len(additions)} dropped {dropped} "
                    f"pool {len(pool)}")
            if grow == "online" and rounds > 0 and round_idx <= rounds:
                # rounds together add exactly initial_count samples (doubling)
                share = initial_count // rounds + (1 if round_idx <= initial_count % rounds else 0)
                added = _grow_dataset(task, share, streams["grow"], weights=weights,
                                      mode=config.weight_mode)
                grow_added += added
                events.append(f"step {step}: growth added {len(added)} samples")
            _log_round(metrics, step, config.policy, scores, ue, overall, weights, pool, task)
            if out_path is not None:
                _save_checkpoint(out_path, step, ens, states, weights, pool, metrics,
                                 events, streams, grow_added, task)

    if grow != "none" and isinstance(task, _ClsTask) and grow_added:
        counts = np.bincount(task.train_y[np.asarray(grow_added, dtype=np.int64)],
                             minlength=task.k)
        for c in range(task.k):
            metrics.log(config.total_steps, "train", config.policy, "grow_count",
                        c, float(counts[c]))

    per_sample = task.test_metrics(ens)
    aggregates = _log_test(metrics, config.total_steps, config.policy, per_sample, task)
    result = RunResult(metrics, events, per_sample, aggregates, ens,
                       pool.manifest(), config, seed)
    if out_path is not None:
        _write_run_dir(out_path, config, seed, result)
    return result


def _grow_dataset(task, count: int, rng: RngStream, weights: ClassWeights | None = None,
                  mode: str = "mean") -> list[int]:
    """Add `count` transformed copies of real training points, drawn uniformly
    or by the current class weights; returns the source ids."""
    if not isinstance(task, _ClsTask):
        raise ValueError("dataset growth is defined for point tasks only")
    if count < 1:
        return []
    if weights is None:
        ids = rng.integers(len(task.train_y), (count,))
    else:
        ids = draw_batch(task.presence_train, weights, count, rng, mode)
    xs = np.stack([augment_point(task.train_x[int(i)], rng) for i in ids])
    ys = task.train_y[np.asarray(ids, dtype=np.int64)]
    task.extend(xs, ys)
    return [int(i) for i in ids]


def _log_round(metrics: RunMetrics, step: int, policy: str, scores: dict, ue: dict,
               overall: float, weights: ClassWeights, pool: SynthPool, task) -> None:
    normalized = weights.normalized()
    for c in range(task.k):
        metrics.log(step, "val", policy, "score", c, scores[c])
    for c in range(task.k):
        metrics.log(step, "val", policy, "ue", c, ue[c])
    for c in range(task.k):
        metrics.log(step, "val", policy, "weight", c, normalized.get(c, 0.0))
    metrics.log(step, "val", policy, "overall", "ALL", overall)
    metrics.log(step, "val", policy, "pool_size", "ALL", float(len(pool)))


def _per_label_means(dicts: list) -> dict:
    labels = sorted({c for d in dicts for c in d})
    out = {}
    for c in labels:
        vals = [d[c] for d in dicts if d.get(c) is not None]
        out[c] = float(np.mean(vals)) if vals else None
    return out


def _log_test(metrics: RunMetrics, step: int, policy: str, per_sample: dict, task) -> dict:
    aggregates: dict = {}
    if task.kind == "classification":
        acc = per_sample["accuracy"]
        aggregates["accuracy"] = float(np.mean(acc))
        metrics.log(step, "test", policy, "accuracy", "ALL", aggregates["accuracy"])
        return aggregates
    for name, dicts in per_sample.items():
        per_label = _per_label_means(dicts)
        for c, value in per_label.items():
            if value is not None:
                metrics.log(step, "test", policy, name, c, value)
        for mode in ("label_mean", "sample_mean", "sample_median"):
            value = aggregate(dicts, mode)
            aggregates[f"{name}_{mode}"] = value
            metrics.log(step, "test", policy, name, mode, value)
    return aggregates


# -- run directory and checkpoints ----------------------------------------------


def _write_run_dir(out_path: Path, config: GaudaConfig, seed: int, result: RunResult) -> None:
    out_path.mkdir(parents=True, exist_ok=True)
    (out_path / "config.json").write_text(config_to_json(config, seed))
    result.metrics.to_csv(out_path / "metrics.csv")
    (out_path / "pool_manifest.json").write_text(
        json.dumps(result.pool_manifest, indent=2, sort_keys=True))
    events = list(result.events) + ["run complete"]
    (out_path / "events.log").write_text("\n".join(events) + "\n")
    save_ensemble(result.ensemble, out_path / "weights" / "final")


def _load_complete_run(out_path: Path, config: GaudaConfig, seed: int, task) -> RunResult | None:
    events_file = out_path / "events.log"
    csv_file = out_path / "metrics.csv"
    if not events_file.exists() or not csv_file.exists():
        return None
    events = events_file.read_text().splitlines()
    if not events or events[-1] != "run complete":
        return None
    stored = (out_path / "config.json").read_text()
    if stored != config_to_json(config, seed):
        raise ValueError("run directory holds a different config; refusing to resume")
    metrics = RunMetrics.from_csv(csv_file)
    pool_manifest = json.loads((out_path / "pool_manifest.json").read_text())
    ens = load_ensemble(out_path / "weights" / "final")
    per_sample = task.test_metrics(ens)
    return RunResult(metrics, events[:-1], per_sample, _aggregates_from_metrics(metrics),
                     ens, pool_manifest, config, seed)


def _aggregates_from_metrics(metrics: RunMetrics) -> dict:
    out = {}
    for step, split, policy, metric, label, value in metrics.rows:
        if split == "test" and label in ("label_mean", "sample_mean", "sample_median"):
            out[f"{metric}_{label}"] = value
        elif split == "test" and metric == "accuracy":
            out["accuracy"] = value
    return out


def _save_checkpoint(out_path: Path, step: int, ens: EnsembleModel, states, weights,
                     pool: SynthPool, metrics: RunMetrics, events, streams: _Streams,
                     grow_added, task) -> None:
    ckpt = out_path / "weights" / f"step{step:06d}"
    tensors = {}
    for i, member in enumerate(ens.members):
        for j, p in enumerate(member.parameters()):
            tensors[f"m{i}.p{j}"] = p
        for j, (m, v) in enumerate(zip(states[i].m, states[i].v)):
            tensors[f"m{i}.am{j}"] = m
            tensors[f"m{i}.av{j}"] = v
    if len(pool) > 0:
        tensors["pool.images"] = np.stack([s.image for s, _ in pool.items])
        tensors["pool.masks"] = np.stack([s.mask for s, _ in pool.items])
    if grow_added:
        # grown samples sit at the tail of the task arrays, in addition order
        tensors["grow.x"] = task.train_x[-len(grow_added):]
        tensors["grow.y"] = task.train_y[-len(grow_added):].astype(np.float64)
    manifest = {
        "step": step,
        "adam_steps": [s.step for s in states],
        "weights": {"values": {str(c): w for c, w in weights.weights.items()},
                    "provenance": weights.provenance, "step": weights.step},
        "pool_meta": [meta for _, meta in pool.items],
        "pool_capacity": pool.capacity,
        "streams": streams.export(),
        "metrics_rows": [list(r) for r in metrics.rows],
        "events": list(events),
        "grow_added": list(grow_added),
    }
    tensor_io.save_tensor_dict(ckpt, tensors, manifest)


def _latest_checkpoint(out_path: Path) -> Path | None:
    weights_dir = out_path / "weights"
    if not weights_dir.exists():
        return None
    ckpts = sorted(p for p in weights_dir.iterdir() if p.name.startswith("step"))
    return ckpts[-1] if ckpts else None


def _load_checkpoint(out_path: Path, config: GaudaConfig, seed: int, task,
                     streams: _Streams):
    ckpt = _latest_checkpoint(out_path)
    if ckpt is None:
        return None
    tensors, manifest = tensor_io.load_tensor_dict(ckpt)
    ens = task.init_ensemble(config, streams["init"]).mark_trained()
    members = []
    states = []
    for i in range(config.k_members):
        template = ens.members[i]
        count = len(template.parameters())
        params = [tensors[f"m{i}.p{j}"] for j in range(count)]
        members.append(template.with_parameters(params))
        state = adam_state(params, lr=config.lr)
        state.m = [tensors[f"m{i}.am{j}"] for j in range(count)]
        state.v = [tensors[f"m{i}.av{j}"] for j in range(count)]
        state.step = manifest["adam_steps"][i]
        states.append(state)
    ens = replace(ens, members=tuple(members))
    w = manifest["weights"]
    weights = ClassWeights({int(c): v for c, v in w["values"].items()},
                           w["provenance"], w["step"])
    pool = SynthPool(manifest["pool_capacity"])
    if manifest["pool_meta"]:
        images = tensors["pool.images"]
        masks = tensors["pool.masks"]
        for j, meta in enumerate(manifest["pool_meta"]):
            pool.items.append((make_paired_sample(images[j], masks[j]), meta))
    if manifest["grow_added"]:
        task.extend(tensors["grow.x"], tensors["grow.y"].astype(np.int64))
    metrics = RunMetrics()
    for row in manifest["metrics_rows"]:
        metrics.rows.append((int(row[0]), row[1], row[2], row[3], row[4], float(row[5])))
    streams.restore({name: (int(sid), int(counter))
                     for name, (sid, counter) in manifest["streams"].items()})
    return (ens, states, weights, pool, metrics, list(manifest["events"]),
            manifest["step"], list(manifest["grow_added"]))


# -- supplementary studies -------------------------------------------------------


def default_study_config() -> GaudaConfig:
    """Small point-task ensemble used by the two ablation studies."""
    return GaudaConfig(policy="none", total_steps=600, val_interval=100,
                       batch_size=16, lr=1e-3, k_members=20, hidden=(10,),
                       dropout_p=0.5, n_c=1)


def _overall_curve(metrics: RunMetrics) -> list[tuple[int, float]]:
    rows = metrics.select(split="val", metric="overall")
    return [(step, value) for step, _, _, _, _, value in rows]


def supp_b_run(dataset, seed: int, config: GaudaConfig | None = None) -> dict:
    """Score-adaptive vs uncertainty-adaptive sampling on the same data and seed.

    Both arms share every hyperparameter except the weight-update rule. Returns
    test accuracy per arm, validation accuracy curves, and the UE - AS delta.
    """
    base = config if config is not None else default_study_config()
    out: dict = {"curves": {}, "accuracy": {}}
    for policy in ("AS", "UE"):
        result = run_training(dataset, replace(base, policy=policy), seed)
        out["curves"][policy] = _overall_curve(result.metrics)
        out["accuracy"][policy] = result.test_aggregates["accuracy"]
    out["delta"] = out["accuracy"]["UE"] - out["accuracy"]["AS"]
    return out


def supp_c_run(dataset, seed: int, config: GaudaConfig | None = None) -> dict:
    """Fixed pretraining-time growth vs uncertainty-guided online growth.

    Each arm adds exactly |train| transformed samples; the online arm spreads
    them over validation rounds and draws by the current class weights. Reports
    what fraction of the added samples came from the minority class.
    """
    base = config if config is not None else default_study_config()
    train_ids = dataset.splits["train"]
    counts = np.bincount(dataset.labels[train_ids])
    minority = int(np.argmin(counts))
    arms = {"pretrain": ("none", "pretrain"), "online": ("UE", "online")}
    out: dict = {"minority_class": minority, "accuracy": {}, "minority_fraction": {}}
    for arm, (policy, grow) in arms.items():
        result = run_training(dataset, replace(base, policy=policy), seed, grow=grow)
        rows = result.metrics.select(split="train", metric="grow_count")
        by_class = {int(label): value for _, _, _, _, label, value in rows}
        total = sum(by_class.values())
        out["accuracy"][arm] = result.test_aggregates["accuracy"]
        out["minority_fraction"][arm] = by_class.get(minority, 0.0) / total
    ratio = out["minority_fraction"]["online"] / max(out["minority_fraction"]["pretrain"], 1e-12)
    out["minority_ratio"] = ratio
    return out
