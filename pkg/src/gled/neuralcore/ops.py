"""Primitive operations with explicit shape contracts.

Each function records itself on the autograd tape through torch; violations of
the documented shapes raise :class:`~gled.errors.ContractError` instead of a
backend error.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F

from ..errors import ContractError, NumericalError

Tensor = torch.Tensor


def _same_shape(a: Tensor, b: Tensor, name: str) -> None:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError as exc:
        raise ContractError(f"{name}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not broadcast") from exc


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ContractError(f"matmul: inner dimensions of {tuple(a.shape)} and {tuple(b.shape)} differ")
    return torch.matmul(a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return a * b


def scale(a: Tensor, c: float) -> Tensor:
    return a * c


def relu(a: Tensor) -> Tensor:
    return torch.relu(a)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.ndim == 0 or a.shape[axis] == 0:
        raise ContractError("softmax over an empty axis")
    return torch.softmax(a, dim=axis)


def layer_norm(a: Tensor, eps: float = 1e-5, weight: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Normalise over the last axis: ``(a - mean) / sqrt(var + eps)`` with biased variance."""
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ContractError("layer_norm over an empty axis")
    mu = a.mean(dim=-1, keepdim=True)
    d = a - mu
    var = (d * d).mean(dim=-1, keepdim=True)
    out = d / torch.sqrt(var + eps)
    if weight is not None:
        out = out * weight
    if bias is not None:
        out = out + bias
    return out


def conv1d_periodic(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Circular 1D convolution. ``x``: (B, C_in, L), ``weight``: (C_out, C_in, K) with odd K."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ContractError(f"conv1d_periodic expects (B,C,L) input and (O,C,K) kernel, got {tuple(x.shape)}, {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ContractError(f"conv1d_periodic: {x.shape[1]} input channels but kernel expects {weight.shape[1]}")
    k = weight.shape[-1]
    if k % 2 == 0:
        raise ContractError("conv1d_periodic needs an odd kernel width")
    p = k // 2
    if p > x.shape[-1]:
        raise ContractError("conv1d_periodic: kernel wider than the periodic signal")
    xp = torch.cat([x[..., x.shape[-1] - p :], x, x[..., :p]], dim=-1) if p else x
    return F.conv1d(xp, weight, bias)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape (out, in)."""
    if x.shape[-1] != weight.shape[-1]:
        raise ContractError(f"linear: input width {x.shape[-1]} != weight in-features {weight.shape[-1]}")
    out = torch.matmul(x, weight.transpose(0, 1))
    return out + bias if bias is not None else out


def mean(a: Tensor, axis: int | Sequence[int] | None = None, keepdim: bool = False) -> Tensor:
    return a.mean() if axis is None else a.mean(dim=axis, keepdim=keepdim)


def sum(a: Tensor, axis: int | Sequence[int] | None = None, keepdim: bool = False) -> Tensor:  # noqa: A001
    return a.sum() if axis is None else a.sum(dim=axis, keepdim=keepdim)


def l2_norm(a: Tensor, axis: int | Sequence[int] | None = None) -> Tensor:
    sq = a * a
    return torch.sqrt(sq.sum() if axis is None else sq.sum(dim=axis))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ContractError("concat of an empty list")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if p.ndim != len(ref) or any(p.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ContractError(f"concat: incompatible shapes {tuple(ref)} and {tuple(p.shape)} on axis {axis}")
    return torch.cat(list(parts), dim=axis)


def slice(a: Tensor, axis: int, start: int, length: int) -> Tensor:  # noqa: A001
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise ContractError(f"slice [{start}, {start + length}) out of range for axis of size {a.shape[axis]}")
    return a.narrow(axis, start, length)


def sinusoidal_embed(index: Tensor | int, width: int, max_period: float = 10_000.0, dtype=None) -> Tensor:
    """Transformer-style embedding of integer indices: ``[sin(i w_k), cos(i w_k)]``."""
    if width < 2 or width % 2:
        raise ContractError(f"sinusoidal_embed width must be even and >= 2, got {width}")
    idx = torch.as_tensor(index, dtype=dtype or torch.get_default_dtype())
    half = width // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=idx.dtype) / half)
    arg = idx[..., None] * freqs
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every reachable leaf. The tape is consumed."""
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss).all():
        raise NumericalError(f"non-finite loss {loss.item()}")
    loss.reshape(()).backward()


def check_finite(a: Tensor, what: str = "tensor") -> Tensor:
    if not torch.isfinite(a).all():
        raise NumericalError(f"non-finite values in {what}")
    return a
