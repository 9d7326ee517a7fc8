"""Variance-exploding diffusion decoder with optional residual guidance."""

from .denoiser import DenoiserConfig, DenoiserNet, denoise_predict
from .guidance import (
    ResidualSpec,
    guidance_shift,
    pin_indices,
    pin_observable,
    residual_direction,
    reynolds_stress,
    reynolds_stress_target,
)
from .sampling import ChainResult, guided_sample, sample
from .schedule import NoiseSchedule, build_schedule, noising, reverse_moments, reverse_variance, score
from .training import DecoderTrainConfig, decoder_loss, train_decoder

__all__ = [
    "NoiseSchedule",
    "build_schedule",
    "noising",
    "reverse_moments",
    "reverse_variance",
    "score",
    "DenoiserConfig",
    "DenoiserNet",
    "denoise_predict",
    "ResidualSpec",
    "pin_observable",
    "pin_indices",
    "reynolds_stress",
    "reynolds_stress_target",
    "residual_direction",
    "guidance_shift",
    "sample",
    "guided_sample",
    "ChainResult",
    "DecoderTrainConfig",
    "decoder_loss",
    "train_decoder",
]
