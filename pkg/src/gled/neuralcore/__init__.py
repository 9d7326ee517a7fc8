"""Differentiable building blocks: primitives, layers, Adam and checkpoints.

Tensors are plain ``torch.Tensor`` objects and reverse-mode gradients come from
torch autograd; this package fixes the primitive surface, shape contracts,
seeding discipline and on-disk format the rest of the code relies on.
"""

from . import ops
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint
from .layers import Conv1dPeriodic, LayerNorm, Linear
from .params import AdamConfig, ParamStore, adam_step
from .rng import make_rng, normal

__all__ = [
    "ops",
    "Linear",
    "Conv1dPeriodic",
    "LayerNorm",
    "ParamStore",
    "AdamConfig",
    "adam_step",
    "make_rng",
    "normal",
    "save_checkpoint",
    "load_checkpoint",
    "write_checkpoint",
    "read_checkpoint",
]
