"""Seeded counter-based random streams (numpy Philox) feeding torch tensors."""

from __future__ import annotations

import numpy as np
import torch


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent Philox stream for ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream) & (2**64 - 1)]))


def normal(rng: np.random.Generator, shape, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    np_dtype = np.float64 if dtype == torch.float64 else np.float32
    return torch.from_numpy(rng.standard_normal(tuple(shape), dtype=np_dtype))


def uniform(rng: np.random.Generator, shape, low: float, high: float, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.from_numpy(rng.uniform(low, high, size=tuple(shape))).to(dtype)
