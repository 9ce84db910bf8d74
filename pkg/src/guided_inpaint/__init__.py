"""Classifier-guided diffusion inpainting with hybrid stochastic/deterministic sampling."""

from .schedule import (
    NoiseSchedule,
    SkipSequence,
    build_linear_schedule,
    build_skip_sequence,
    full_sequence,
)
from .contracts import Denoiser, Classifier, UnsupportedCapability, denoiser_input_vjp
from .mixture import (
    GaussianMixtureModel,
    MixtureDenoiser,
    MixtureClassifier,
    mixture_posterior_x0,
    mixture_predict_eps,
    mixture_classifier_logprob,
)
from .sampler import (
    GuidanceConfig,
    Candidate,
    RunResult,
    forward_noise,
    predict_x0,
    ddim_step,
    ddim_sigma,
    inpaint_constrain,
    classifier_guide,
    composite_renoise,
    run_stochastic_phase,
    run_deterministic_refinement,
    run_pipeline,
)
from .toynet import (
    ToyDenoiser,
    ToyClassifier,
    ToyDenoiserParams,
    ToyClassifierParams,
    train_toy_denoiser,
    train_toy_classifier,
    predict_labels,
)
from .data import make_benchmark_mask, make_toy_dataset, load_image, save_image
from .metrics import psnr, ssim, evaluate_inpainting, mixture_coverage_stats

__version__ = "0.1.0"

__all__ = [
    "NoiseSchedule", "SkipSequence", "build_linear_schedule", "build_skip_sequence",
    "full_sequence", "Denoiser", "Classifier", "UnsupportedCapability",
    "denoiser_input_vjp", "GaussianMixtureModel", "MixtureDenoiser", "MixtureClassifier",
    "mixture_posterior_x0", "mixture_predict_eps", "mixture_classifier_logprob",
    "GuidanceConfig", "Candidate", "RunResult", "forward_noise", "predict_x0",
    "ddim_step", "ddim_sigma", "inpaint_constrain", "classifier_guide",
    "composite_renoise", "run_stochastic_phase", "run_deterministic_refinement",
    "run_pipeline", "ToyDenoiser", "ToyClassifier", "ToyDenoiserParams",
    "ToyClassifierParams", "train_toy_denoiser", "train_toy_classifier",
    "predict_labels", "make_benchmark_mask", "make_toy_dataset", "load_image",
    "save_image", "psnr", "ssim", "evaluate_inpainting", "mixture_coverage_stats",
]
