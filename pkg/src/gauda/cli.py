"""Experiment harness tying the package together from the command line.

Four subcommands:

  pretrain-generative   stagewise autoencoder + latent-diffusion pretraining
                        with a generative-quality report (kernel-MMD, RO/SO
                        cross scores, guidance-strength sweep)
  compare-policies      sampling-policy comparison across seeds with a table
                        report, violin-plot CSV, and effect sizes
  supp-studies          the two small point-task studies (score- vs
                        uncertainty-driven weights; fixed vs online growth)
  report                re-emit comparison artifacts from completed runs

Every run writes under <out>/<name>/; rerunning with --resume continues from
whatever finished earlier. Exit codes: 0 success, 2 bad configuration,
3 numeric failure, 4 missing prerequisite artifact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent import futures
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autoencoder import (AEConfig, DivergenceError, encode_batch, load_codec,
                          mask_from_argmax, mask_pixel_accuracy,
                          presence_preservation, save_codec, train_autoencoders)
from .data import ShapesSegSpec, Toy2DSpec, gen_shapes_seg, gen_toy2d, stack_samples
from .diffusion import (DiffusionTrainConfig, SamplingError, init_denoiser,
                        make_linear_schedule, train_denoiser)
from .metrics import cohens_d, kernel_mmd, ro_so_protocol
from .nn import GradientError, adam_state, cross_entropy, init_mlp, predict, train_step
from .rng import RngStream
from .stack import (GenerativeStack, StackConfig, conditioning_fidelity,
                    conditioning_labels, load_stack, save_stack, standardize_stats,
                    synthesize_pairs)
from .tensor import reshape
from .trainer import (BASE_POLICIES, GaudaConfig, RunResult, StackSynthesizer,
                      TrainingError, default_study_config, parse_policy,
                      run_training, supp_b_run, supp_c_run)

OMEGA_SWEEP = (0.0, 1.0, 2.0, 3.0, 5.0)
DEFAULT_POLICIES = ("none", "aug", "AS", "AS+aug", "GAUDA", "GAUDA+aug")
REFERENCE_DELTA = 0.061  # study-1 reference accuracy improvement
REFERENCE_EFFECT_SIZE = 0.714  # reference rare-class effect size
VIOLIN_HEADER = "policy,seed,sample_id,metric,value"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4


class ConfigError(ValueError):
    """Malformed flags or experiment JSON."""


class MissingArtifactError(FileNotFoundError):
    """A command needs an artifact an earlier command has not produced."""


# -- experiment configuration ------------------------------------------------


@dataclass
class ExperimentConfig:
    """One experiment: dataset, policy grid, run knobs, and output location."""

    name: str = "exp"
    dataset: str = "shapes"  # "shapes" | "toy2d"
    dataset_params: dict = field(default_factory=dict)
    data_seed: int = 7
    stack_seed: int = 11
    policies: tuple = DEFAULT_POLICIES
    seeds: tuple = (0, 1, 2)
    out: str = "runs"
    gauda: GaudaConfig = field(default_factory=GaudaConfig)
    stack: StackConfig = field(default_factory=StackConfig)
    eval_samples: int = 60  # pairs per side for the kernel-MMD gate
    fidelity_samples: int = 25  # draws per (class, omega) fidelity probe
    ro_samples: int = 40  # synthetic pairs per cross-evaluation arm


def experiment_to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


def _tuplify(params: dict, keys: tuple) -> dict:
    out = dict(params)
    for key in keys:
        if key in out and isinstance(out[key], list):
            out[key] = tuple(out[key])
    return out


def experiment_from_json(text: str) -> ExperimentConfig:
    payload = json.loads(text)
    if not isinstance(payload, dict):
        raise ConfigError("experiment config must be a JSON object")
    try:
        gauda = GaudaConfig(**_tuplify(payload.pop("gauda", {}), ("hidden",)))
        stack_raw = payload.pop("stack", {})
        ae = AEConfig(**_tuplify(stack_raw.pop("ae", {}), ("enc_hidden", "dec_hidden")))
        diffusion = DiffusionTrainConfig(
            **_tuplify(stack_raw.pop("diffusion", {}), ("betas",)))
        stack = StackConfig(ae=ae, diffusion=diffusion,
                            **_tuplify(stack_raw, ("denoiser_hidden",)))
        for key in ("policies", "seeds"):
            if key in payload:
                payload[key] = tuple(payload[key])
        cfg = ExperimentConfig(gauda=gauda, stack=stack, **payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad experiment config: {exc}") from exc
    _validate_experiment(cfg)
    return cfg


def _validate_policies(policies) -> None:
    if not policies:
        raise ConfigError("empty policy list")
    for policy in policies:
        base, _ = parse_policy(policy)
        if base not in BASE_POLICIES:
            raise ConfigError(f"unknown policy {policy!r}")


def _validate_experiment(cfg: ExperimentConfig) -> None:
    _validate_policies(cfg.policies)
    if not cfg.seeds:
        raise ConfigError("empty seed list")
    if cfg.eval_samples < 20:  # kernel-MMD gate needs 10 splits of >= 2 vectors
        raise ConfigError(f"eval_samples must be >= 20, got {cfg.eval_samples}")
    if cfg.fidelity_samples < 1 or cfg.ro_samples < 1:
        raise ConfigError("fidelity_samples and ro_samples must be positive")


def build_dataset(cfg: ExperimentConfig):
    params = _tuplify(cfg.dataset_params,
                      ("n_per_class", "kinds", "intensities", "occurrence"))
    rng = RngStream(cfg.data_seed)
    try:
        if cfg.dataset == "shapes":
            return gen_shapes_seg(ShapesSegSpec(**params), rng)
        if cfg.dataset == "toy2d":
            return gen_toy2d(Toy2DSpec(**params), rng)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset parameters: {exc}") from exc
    raise ConfigError(f"unknown dataset {cfg.dataset!r}")


def _experiment_root(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.out) / cfg.name
    root.mkdir(parents=True, exist_ok=True)
    (root / "experiment.json").write_text(experiment_to_json(cfg) + "\n")
    return root


def _worker_count(n_jobs: int) -> int:
    workers = os.cpu_count() or 1
    cap = os.environ.get("GAUDA_THREADS")
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"GAUDA_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(workers, n_jobs))


# -- generative pretraining ----------------------------------------------------


def pretrain_stack(train_samples, config: StackConfig, stack_dir: Path, seed: int,
                   resume: bool) -> tuple[GenerativeStack, dict]:
    """Stagewise pretraining rooted at one seed.

    The codec is saved the moment it finishes so a later diffusion failure
    keeps the earlier artifact; with resume=True each completed stage is
    loaded instead of retrained (spawned streams make the remaining stages
    identical to an uninterrupted run).
    """
    rng = RngStream(seed)
    codec_dir = stack_dir / "codec"
    report: dict = {}
    if resume and (stack_dir / "denoiser").exists():
        stack = load_stack(stack_dir)
        report["resumed"] = True
    else:
        if resume and codec_dir.exists():
            codec = load_codec(codec_dir)
            report["ae_resumed"] = True
        else:
            codec, curves = train_autoencoders(train_samples, config.ae, rng.spawn(0))
            stack_dir.mkdir(parents=True, exist_ok=True)
            save_codec(codec, codec_dir)
            report["ae_loss_last"] = {k: v[-1] for k, v in curves.items()}
        images, masks = stack_samples(train_samples)
        latents = encode_batch(codec, images, masks)
        mu, sd = standardize_stats(latents)
        z0 = (latents - mu) / sd
        cond = conditioning_labels(train_samples, rng.spawn(1))
        sched = make_linear_schedule(config.timesteps, config.beta_start,
                                     config.beta_end)
        denoiser = init_denoiser(codec.k, 2 * config.ae.d_lat,
                                 config.denoiser_hidden, rng.spawn(2),
                                 emb_dim=config.emb_dim, time_dim=config.time_dim)
        denoiser, losses = train_denoiser(denoiser, z0, cond, sched,
                                          config.diffusion, rng.spawn(3))
        stack = GenerativeStack(codec, sched, denoiser, mu, sd)
        save_stack(stack, stack_dir)
        report["diffusion_loss_first"] = losses[0]
        report["diffusion_loss_last"] = float(np.mean(losses[-50:]))
    report["mask_pixel_accuracy"] = mask_pixel_accuracy(stack.codec, train_samples)
    report["presence_preservation"] = presence_preservation(stack.codec, train_samples)
    report["compression_ratio"] = stack.codec.compression_ratio
    report["digest"] = stack.digest()
    return stack, report


def synthesize_mixed(stack: GenerativeStack, count: int, omega: float,
                     rng: RngStream) -> list:
    """count pairs spread round-robin over the foreground classes; tops up
    once from the first class if any decodes were dropped."""
    fg = list(range(1, stack.n_classes)) or [0]
    out = []
    share, extra = divmod(count, len(fg))
    for rank, c in enumerate(fg):
        want = share + (1 if rank < extra else 0)
        if want:
            samples, _ = synthesize_pairs(stack, c, want, omega, rng.spawn(c))
            out.extend(samples)
    missing = count - len(out)
    if missing > 0:
        samples, _ = synthesize_pairs(stack, fg[0], missing, omega,
                                      rng.spawn(len(fg) + 1))
        out.extend(samples)
    return out[:count]


def fit_mask_predictor(samples, rng: RngStream, steps: int = 400,
                       hidden: tuple = (64,), lr: float = 1e-3):
    """Small dense mask model for the cross-evaluation protocols; returns
    predictor(image) -> one-hot mask."""
    k, h, w = samples[0].mask.shape
    c = samples[0].image.shape[0]
    model = init_mlp((c * h * w, *hidden, h * w * k), rng.spawn(0))
    state = adam_state(model.parameters(), lr=lr)
    images = np.stack([s.image.reshape(-1) for s in samples])
    rows = np.stack([s.mask.transpose(1, 2, 0).reshape(-1, k) for s in samples])
    draw = rng.spawn(1)
    for _ in range(steps):
        ids = draw.integers(len(samples), (min(16, len(samples)),))
        x = images[ids]
        target = rows[ids].reshape(-1, k)
        model, state, _ = train_step(
            model, state,
            lambda out: cross_entropy(reshape(out, (x.shape[0] * h * w, k)), target),
            x)

    def predictor(image: np.ndarray) -> np.ndarray:
        logits = predict(model, image.reshape(1, -1)).reshape(h, w, k)
        return mask_from_argmax(np.argmax(logits, axis=-1), k)

    return predictor


def stack_quality_report(stack: GenerativeStack, dataset, cfg: ExperimentConfig,
                         rng: RngStream) -> dict:
    test = dataset.subset("test")
    fg = list(range(1, stack.n_classes))
    sweep: dict = {}
    for omega in OMEGA_SWEEP:
        per_class = {}
        for c in fg:
            per_class[c] = conditioning_fidelity(
                stack, c, cfg.fidelity_samples, omega,
                rng.spawn(100 * int(round(10 * omega)) + c))
        sweep[f"{omega:g}"] = per_class
    synth = synthesize_mixed(stack, cfg.eval_samples, cfg.gauda.omega, rng.spawn(7001))
    real = [test[i % len(test)] for i in range(cfg.eval_samples)]
    mmd_mean, mmd_sd = kernel_mmd(
        np.stack([s.image.reshape(-1) for s in real]),
        np.stack([s.image.reshape(-1) for s in synth]))
    ro, so = ro_so_protocol(
        lambda count, stream: synthesize_mixed(stack, count, cfg.gauda.omega, stream),
        dataset.subset("train"), test, fit_mask_predictor, cfg.ro_samples,
        rng.spawn(7002))
    return {
        "omega_sweep_fidelity": sweep,
        "kernel_mmd": {"mean": mmd_mean, "sd": mmd_sd},
        "ro_score": ro,
        "so_score": so,
    }


def cmd_pretrain_generative(cfg: ExperimentConfig, resume: bool) -> None:
    if cfg.dataset != "shapes":
        raise ConfigError("generative pretraining needs the paired-mask dataset")
    dataset = build_dataset(cfg)
    root = _experiment_root(cfg)
    stack, report = pretrain_stack(dataset.subset("train"), cfg.stack,
                                   root / "stack", cfg.stack_seed, resume)
    report.update(stack_quality_report(stack, dataset, cfg,
                                       RngStream(cfg.stack_seed).spawn(4)))
    (root / "stack_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"stack saved under {root / 'stack'}")
    print(f"mask pixel accuracy {report['mask_pixel_accuracy']:.4f}, "
          f"presence preservation {report['presence_preservation']:.4f}")
    print(f"kernel-MMD {report['kernel_mmd']['mean']:.5f} "
          f"(sd {report['kernel_mmd']['sd']:.5f}), "
          f"RO {report['ro_score']:.4f}, SO {report['so_score']:.4f}")
    for omega, per_class in report["omega_sweep_fidelity"].items():
        rendered = ", ".join(f"{c}: {v:.2f}" for c, v in per_class.items())
        print(f"fidelity at omega={omega}: {rendered}")


# -- policy comparison ----------------------------------------------------------


_NUMERIC_ERRORS = (TrainingError, DivergenceError, SamplingError, GradientError,
                   ArithmeticError)


def _per_sample_scalars(result: RunResult) -> dict:
    """Per metric, (sample_id, value) pairs; per-label dicts reduce to the
    mean over defined labels."""
    if "accuracy" in result.per_sample:
        return {"accuracy": list(enumerate(result.per_sample["accuracy"]))}
    out = {}
    for metric, dicts in result.per_sample.items():
        pairs = []
        for i, d in enumerate(dicts):
            defined = [v for v in d.values() if v is not None]
            if defined:
                pairs.append((i, float(np.mean(defined))))
        out[metric] = pairs
    return out


def _rare_class_means(result: RunResult, rare: int) -> float | None:
    dicts = result.per_sample.get("iou")
    if dicts is None:
        return None
    vals = [d[rare] for d in dicts if d.get(rare) is not None]
    return float(np.mean(vals)) if vals else None


def _table_metrics(results: dict) -> tuple:
    any_result = next(iter(results.values()))
    if "accuracy" in any_result.test_aggregates:
        return ("accuracy",)
    return ("iou_label_mean", "dice_label_mean", "ap_label_mean")


def _comparison_report(cfg: ExperimentConfig, results: dict, notices: list,
                       rare: int | None) -> dict:
    metrics = _table_metrics(results)
    table: dict = {}
    for policy in cfg.policies:
        per_seed = [results[(policy, s)] for s in cfg.seeds if (policy, s) in results]
        if not per_seed:
            continue
        row = {}
        for metric in metrics:
            vals = [r.test_aggregates[metric] for r in per_seed]
            row[metric] = {"mean": float(np.mean(vals)),
                           "sd": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                           "n_seeds": len(vals)}
        table[policy] = row
    report = {"table": table, "notices": notices, "metrics": list(metrics),
              "seeds": list(cfg.seeds)}

    headline = metrics[0]
    gauda_rows = [p for p in table if parse_policy(p)[0] == "GAUDA"]
    plain_rows = [p for p in table if parse_policy(p)[0] != "GAUDA"]
    if gauda_rows and plain_rows:
        gauda = max(gauda_rows, key=lambda p: table[p][headline]["mean"])
        best = max(plain_rows, key=lambda p: table[p][headline]["mean"])
        g_vals = [results[(gauda, s)].test_aggregates[headline]
                  for s in cfg.seeds if (gauda, s) in results]
        b_vals = [results[(best, s)].test_aggregates[headline]
                  for s in cfg.seeds if (best, s) in results]
        if len(g_vals) >= 2 and len(b_vals) >= 2:
            report["cohens_d"] = {"metric": headline, "gauda": gauda,
                                  "baseline": best, "d": cohens_d(g_vals, b_vals)}
            if rare is not None:
                g_rare = [v for v in (_rare_class_means(results[(gauda, s)], rare)
                                      for s in cfg.seeds if (gauda, s) in results)
                          if v is not None]
                b_rare = [v for v in (_rare_class_means(results[(best, s)], rare)
                                      for s in cfg.seeds if (best, s) in results)
                          if v is not None]
                if len(g_rare) >= 2 and len(b_rare) >= 2:
                    report["cohens_d_rare"] = {
                        "label": rare, "gauda": gauda, "baseline": best,
                        "d": cohens_d(g_rare, b_rare),
                        "reference": REFERENCE_EFFECT_SIZE}
    return report


def _render_table(report: dict) -> str:
    metrics = report["metrics"]
    width = max([len(p) for p in report["table"]] + [8])
    lines = [" ".join([f"{'policy':<{width}}"] + [f"{m:>22}" for m in metrics])]
    for policy, row in report["table"].items():
        cells = [f"{row[m]['mean']:.4f} +/- {row[m]['sd']:.4f}" for m in metrics]
        lines.append(" ".join([f"{policy:<{width}}"] + [f"{c:>22}" for c in cells]))
    if "cohens_d" in report:
        d = report["cohens_d"]
        rendered = "undefined" if d["d"] is None else f"{d['d']:.3f}"
        lines.append(f"Cohen's d ({d['metric']}, {d['gauda']} vs {d['baseline']}): "
                     f"{rendered}")
    if "cohens_d_rare" in report:
        d = report["cohens_d_rare"]
        rendered = "undefined" if d["d"] is None else f"{d['d']:.3f}"
        lines.append(f"Cohen's d (rare label {d['label']}): {rendered} "
                     f"[reference {d['reference']}]")
    for notice in report["notices"]:
        lines.append(f"notice: {notice}")
    return "\n".join(lines) + "\n"


def _write_violin_csv(path: Path, cfg: ExperimentConfig, results: dict) -> None:
    lines = [VIOLIN_HEADER]
    for policy in cfg.policies:
        for seed in cfg.seeds:
            result = results.get((policy, seed))
            if result is None:
                continue
            for metric, pairs in sorted(_per_sample_scalars(result).items()):
                for sample_id, value in pairs:
                    lines.append(f"{policy},{seed},{sample_id},{metric},{value!r}")
    path.write_text("\n".join(lines) + "\n")


def cmd_compare_policies(cfg: ExperimentConfig, resume: bool,
                         report_only: bool = False) -> None:
    _validate_policies(cfg.policies)
    needs_stack = any(parse_policy(p)[0] == "GAUDA" for p in cfg.policies)
    if needs_stack and cfg.dataset != "shapes":
        raise ConfigError("synthesis policies need the paired-mask dataset")
    dataset = build_dataset(cfg)
    root = _experiment_root(cfg)
    synthesizer = None
    if needs_stack:
        stack_dir = root / "stack"
        if not (stack_dir / "denoiser").exists():
            raise MissingArtifactError(
                f"no pretrained generative stack under {stack_dir}; "
                "run pretrain-generative first")
        synthesizer = StackSynthesizer(load_stack(stack_dir))

    def execute(policy: str, seed: int) -> RunResult:
        run_dir = root / "runs" / f"{policy}-seed{seed}"
        if report_only and not (run_dir / "events.log").exists():
            raise MissingArtifactError(f"missing completed run {run_dir}")
        synth = synthesizer if parse_policy(policy)[0] == "GAUDA" else None
        return run_training(dataset, replace(cfg.gauda, policy=policy), seed,
                            synthesizer=synth, out_dir=run_dir,
                            resume=resume or report_only)

    jobs = [(p, s) for p in cfg.policies for s in cfg.seeds]
    results: dict = {}
    notices: list[str] = []
    with futures.ThreadPoolExecutor(max_workers=_worker_count(len(jobs))) as pool:
        pending = {pool.submit(execute, p, s): (p, s) for p, s in jobs}
        for fut in futures.as_completed(pending):
            policy, seed = pending[fut]
            try:
                results[(policy, seed)] = fut.result()
            except _NUMERIC_ERRORS as exc:
                notices.append(f"{policy} seed {seed} failed and was excluded: {exc}")
    if not results:
        raise TrainingError("every run failed: " + "; ".join(notices))

    rare = None
    if cfg.dataset == "shapes":
        rare = dataset.spec.k - 1
    report = _comparison_report(cfg, results, notices, rare)
    (root / "comparison.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_violin_csv(root / "violin.csv", cfg, results)
    text = _render_table(report)
    (root / "comparison.txt").write_text(text)
    print(text, end="")


# -- supplementary studies --------------------------------------------------------


def cmd_supp_studies(cfg: ExperimentConfig, resume: bool) -> None:
    root = _experiment_root(cfg)
    report_path = root / "supp_studies.json"
    if resume and report_path.exists():
        print(report_path.read_text(), end="")
        return
    toy_cfg = cfg if cfg.dataset == "toy2d" else replace(cfg, dataset="toy2d",
                                                         dataset_params={})
    dataset = build_dataset(toy_cfg)
    study_cfg = default_study_config()

    def run_seed(seed: int) -> tuple:
        return supp_b_run(dataset, seed, study_cfg), supp_c_run(dataset, seed, study_cfg)

    with futures.ThreadPoolExecutor(max_workers=_worker_count(len(cfg.seeds))) as pool:
        outcomes = dict(zip(cfg.seeds, pool.map(run_seed, cfg.seeds)))

    deltas = [outcomes[s][0]["delta"] for s in cfg.seeds]
    ratios = [outcomes[s][1]["minority_ratio"] for s in cfg.seeds]
    report = {
        "study_b": {
            "per_seed": {str(s): {"accuracy": outcomes[s][0]["accuracy"],
                                  "delta": outcomes[s][0]["delta"]}
                         for s in cfg.seeds},
            "median_delta": float(np.median(deltas)),
            "reference_delta": REFERENCE_DELTA,
        },
        "study_c": {
            "per_seed": {str(s): {"minority_fraction": outcomes[s][1]["minority_fraction"],
                                  "accuracy": outcomes[s][1]["accuracy"]}
                         for s in cfg.seeds},
            "median_minority_ratio": float(np.median(ratios)),
        },
    }
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    curve_lines = ["study,arm,seed,step,value"]
    for seed in cfg.seeds:
        for arm, curve in outcomes[seed][0]["curves"].items():
            for step, value in curve:
                curve_lines.append(f"b,{arm},{seed},{step},{value!r}")
    (root / "supp_curves.csv").write_text("\n".join(curve_lines) + "\n")
    print(f"study B median delta {report['study_b']['median_delta']:+.4f} "
          f"(reference {REFERENCE_DELTA:+.3f})")
    print(f"study C median minority ratio "
          f"{report['study_c']['median_minority_ratio']:.2f}x")


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gauda",
        description="uncertainty-guided synthetic-data training experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "pretrain-generative": "train the paired autoencoder and latent "
                               "diffusion model, then report generative quality",
        "compare-policies": "run the sampling-policy grid and emit the "
                            "comparison report and violin CSV",
        "supp-studies": "run the two point-task studies",
        "report": "re-emit comparison artifacts from completed runs",
    }
    for name, text in helps.items():
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", default=None, help="experiment JSON path")
        cmd.add_argument("--out", default=None, help="output root directory")
        cmd.add_argument("--name", default=None, help="experiment name")
        cmd.add_argument("--dataset", default=None, choices=("shapes", "toy2d"))
        cmd.add_argument("--seed-list", default=None, help="comma-separated seeds")
        cmd.add_argument("--policies", default=None, help="comma-separated policies")
        cmd.add_argument("--omega", type=float, default=None,
                         help="guidance strength for synthesis policies")
        cmd.add_argument("--replace-fraction", type=float, default=None,
                         help="per-slot synthetic replacement probability")
        cmd.add_argument("--resume", action="store_true",
                         help="continue from existing artifacts")
    return parser


def load_experiment(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = experiment_from_json(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    else:
        cfg = ExperimentConfig()
    try:
        if args.out:
            cfg = replace(cfg, out=args.out)
        if args.name:
            cfg = replace(cfg, name=args.name)
        if args.dataset:
            cfg = replace(cfg, dataset=args.dataset)
        if args.seed_list:
            cfg = replace(cfg, seeds=tuple(int(s) for s in args.seed_list.split(",")))
        if args.policies:
            cfg = replace(cfg, policies=tuple(args.policies.split(",")))
        if args.omega is not None:
            cfg = replace(cfg, gauda=replace(cfg.gauda, omega=args.omega))
        if args.replace_fraction is not None:
            cfg = replace(cfg, gauda=replace(cfg.gauda,
                                             replace_fraction=args.replace_fraction))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _validate_experiment(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_experiment(args)
        if args.command == "pretrain-generative":
            cmd_pretrain_generative(cfg, args.resume)
        elif args.command == "compare-policies":
            cmd_compare_policies(cfg, args.resume)
        elif args.command == "supp-studies":
            cmd_supp_studies(cfg, args.resume)
        else:
            cmd_compare_policies(cfg, resume=True, report_only=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
