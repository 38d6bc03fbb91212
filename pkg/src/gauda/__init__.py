"""Uncertainty-guided synthetic-data training at desk scale.

Class-conditional latent diffusion over a paired (image, mask) autoencoder,
steered online by the class-wise epistemic uncertainty of a deep-ensemble
downstream model, plus the baseline sampling policies and the evaluation
protocols used to compare them.
"""

from .autoencoder import (AEConfig, PairedCodec, PairedSample, make_paired_sample,
                          train_autoencoders)
from .data import (ShapesSegSpec, Toy2DSpec, gen_shapes_seg, gen_toy2d,
                   stratified_split)
from .diffusion import (ConditionalDenoiser, NoiseSchedule, cfg_combine,
                        forward_noise, make_linear_schedule, reverse_sample)
from .ensemble import (ABSENT, EnsembleModel, class_uncertainty, init_ensemble,
                       mean_prediction, predict_posterior)
from .metrics import (RunMetrics, aggregate, average_precision, cohens_d,
                      dice_per_label, iou_per_label, kernel_mmd, ro_so_protocol)
from .rng import RngStream
from .sampling import (ClassWeights, draw_batch, freq_weights,
                       score_adaptive_update, uncertainty_adaptive_update,
                       uniform_weights)
from .stack import (GenerativeStack, StackConfig, conditioning_fidelity,
                    load_stack, save_stack, synthesize_pairs, train_stack)
from .trainer import (GaudaConfig, RunResult, StackSynthesizer, run_training,
                      supp_b_run, supp_c_run)

__all__ = [
    "ABSENT", "AEConfig", "ClassWeights", "ConditionalDenoiser",
    "EnsembleModel", "GaudaConfig", "GenerativeStack", "NoiseSchedule",
    "PairedCodec", "PairedSample", "RngStream", "RunMetrics", "RunResult",
    "ShapesSegSpec", "StackConfig", "StackSynthesizer", "Toy2DSpec",
    "aggregate", "average_precision", "cfg_combine", "class_uncertainty",
    "cohens_d", "conditioning_fidelity", "dice_per_label", "draw_batch",
    "forward_noise", "freq_weights", "gen_shapes_seg", "gen_toy2d",
    "init_ensemble", "iou_per_label", "kernel_mmd", "load_stack",
    "make_linear_schedule", "make_paired_sample", "mean_prediction",
    "predict_posterior", "reverse_sample", "ro_so_protocol", "run_training",
    "save_stack", "score_adaptive_update", "stratified_split", "supp_b_run",
    "supp_c_run", "synthesize_pairs", "train_autoencoders", "train_stack",
    "uncertainty_adaptive_update", "uniform_weights",
]
