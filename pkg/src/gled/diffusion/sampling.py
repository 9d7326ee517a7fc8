"""Reverse-chain decoding: plain and residual-guided."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from ..neuralcore.rng import normal
from .guidance import Denoiser, ResidualSpec, guidance_shift, residual_direction
from .schedule import NoiseSchedule, reverse_moments

log = logging.getLogger(__name__)


@dataclass
class ChainResult:
    sample: torch.Tensor  # final s_hat(z, eps_1, 1)
    eps1: torch.Tensor  # last noised variable of the chain
    evaluations: int
    degenerate_steps: int = 0


def _run_chain(denoiser: Denoiser, z, shape, sched: NoiseSchedule, rng, dtype, rs: ResidualSpec | None) -> ChainResult:
    n_levels = sched.count
    eps = sched.sigma(n_levels) * normal(rng, shape, dtype)
    evals = 0
    degenerate_steps = 0
    with torch.no_grad():
        for i in range(n_levels - 1, 0, -1):
            sig_i, sig_next = sched.sigma(i), sched.sigma(i + 1)
            if rs is None:
                s_hat = denoiser(z, eps, i + 1)
                shift = None
            else:
                n, s_hat, degenerate = residual_direction(denoiser, rs, z, eps, i + 1)
                shift = guidance_shift(n, sig_i, sig_next, rs)
                degenerate_steps += int(degenerate.all())
            evals += 1
            mean, var = reverse_moments(s_hat, eps, sig_i, sig_next)
            if shift is not None:
                mean = mean + shift
            eps = mean + var**0.5 * normal(rng, shape, dtype)
        s_final = denoiser(z, eps, 1)
        evals += 1
    return ChainResult(s_final, eps, evals, degenerate_steps)


def sample(denoiser: Denoiser, z: torch.Tensor, sched: NoiseSchedule, rng: np.random.Generator, micro_shape=None, full: bool = False):
    """Decode a batch of macro states ``z`` (B, ...) into micro states.

    Starts from ``eps_N ~ N(0, sigma_N^2 I)`` and applies the reverse step with
    ``s_hat`` from ``denoiser``; exactly ``N`` network evaluations. ``denoiser``
    may be any callable ``(z, eps, i) -> s_hat``.
    """
    shape = (z.shape[0],) + tuple(micro_shape or denoiser.cfg.micro_shape)
    res = _run_chain(denoiser, z, shape, sched, rng, z.dtype, None)
    return res if full else res.sample


def guided_sample(
    denoiser: Denoiser,
    z: torch.Tensor,
    sched: NoiseSchedule,
    rs: ResidualSpec,
    rng: np.random.Generator,
    micro_shape=None,
    full: bool = False,
):
    """Like :func:`sample` but every reverse mean is shifted along the residual descent direction."""
    shape = (z.shape[0],) + tuple(micro_shape or denoiser.cfg.micro_shape)
    res = _run_chain(denoiser, z, shape, sched, rng, z.dtype, rs)
    if res.degenerate_steps == sched.count - 1:
        warnings.warn("guidance was degenerate at every reverse step; result equals the unguided chain", RuntimeWarning)
    return res if full else res.sample
