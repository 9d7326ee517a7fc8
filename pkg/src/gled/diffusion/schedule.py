"""Variance-exploding noise schedule and the closed-form pieces of the reverse chain."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigurationError, ContractError
from ..neuralcore.rng import normal


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise scales ``sigma_1 < ... < sigma_N``; ``sigma(i)`` is 1-based."""

    sigmas: tuple[float, ...]

    def __post_init__(self):
        s = tuple(float(x) for x in self.sigmas)
        object.__setattr__(self, "sigmas", s)
        if len(s) < 2:
            raise ConfigurationError("a schedule needs at least two noise levels")
        if s[0] <= 0 or any(b <= a for a, b in zip(s, s[1:])):
            raise ConfigurationError("noise levels must be positive and strictly increasing")

    @property
    def count(self) -> int:
        return len(self.sigmas)

    def sigma(self, i: int) -> float:
        if not 1 <= i <= self.count:
            raise ContractError(f"noise index {i} outside [1, {self.count}]")
        return self.sigmas[i - 1]

    def check_data_scale(self, samples: np.ndarray) -> bool:
        """True when ``sigma_N`` is at least ten times the largest sample norm (samples on axis 0)."""
        flat = np.asarray(samples).reshape(len(samples), -1)
        return self.sigmas[-1] >= 10.0 * float(np.linalg.norm(flat, axis=1).max())


def build_schedule(sigma_min: float = 0.002, sigma_max: float = 80.0, count: int = 20) -> NoiseSchedule:
    """Geometric spacing ``sigma_i = sigma_min * (sigma_max / sigma_min) ** ((i - 1) / (N - 1))``."""
    if not 0 < sigma_min < sigma_max:
        raise ConfigurationError(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    if count < 2:
        raise ConfigurationError(f"need at least 2 noise levels, got {count}")
    ratio = math.log(sigma_max / sigma_min)
    sig = [sigma_min * math.exp(ratio * j / (count - 1)) for j in range(count)]
    sig[0], sig[-1] = float(sigma_min), float(sigma_max)
    return NoiseSchedule(tuple(sig))


def noising(s: torch.Tensor, i: int, sched: NoiseSchedule, rng: np.random.Generator) -> torch.Tensor:
    """Draw ``eps_i ~ N(s, sigma_i^2 I)``."""
    return s + sched.sigma(i) * normal(rng, s.shape, s.dtype)


def reverse_variance(sigma_i: float, sigma_next: float) -> float:
    if not 0 < sigma_i < sigma_next:
        raise ContractError(f"reverse step needs 0 < sigma_i < sigma_(i+1), got ({sigma_i}, {sigma_next})")
    return (sigma_next**2 - sigma_i**2) * sigma_i**2 / sigma_next**2


def reverse_moments(s_hat, eps_next, sigma_i: float, sigma_next: float):
    """Mean and variance of ``p(eps_i | s, eps_(i+1))`` with ``s_hat`` in place of ``s``."""
    var = reverse_variance(sigma_i, sigma_next)
    mean = (sigma_next**2 - sigma_i**2) / sigma_next**2 * s_hat + sigma_i**2 / sigma_next**2 * eps_next
    return mean, var


def score(s_hat, eps, sigma: float):
    """Score of the noised density, ``(s_hat - eps) / sigma^2``."""
    if not sigma > 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    return (s_hat - eps) / sigma**2
