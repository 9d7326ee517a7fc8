"""Parameterised layers built on :mod:`gled.neuralcore.ops`."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from . import ops
from .rng import uniform


class Linear(nn.Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, zero: bool = False):
        super().__init__()
        bound = 1.0 / math.sqrt(n_in)
        w = torch.zeros(n_out, n_in) if zero else uniform(rng, (n_out, n_in), -bound, bound)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(n_out)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv1dPeriodic(nn.Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3, zero: bool = False):
        super().__init__()
        bound = 1.0 / math.sqrt(c_in * kernel)
        w = torch.zeros(c_out, c_in, kernel) if zero else uniform(rng, (c_out, c_in, kernel), -bound, bound)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(c_out))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.conv1d_periodic(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(width))
        self.bias = nn.Parameter(torch.zeros(width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.layer_norm(x, self.eps, self.weight, self.bias)
