"""Autoregressive multi-head attention propagator for macro states.

Two evaluation paths share one set of weights:

* :func:`forward_masked` is the batched, causally masked pass used for
  teacher-forced training.
* The incremental kernel behind :class:`KVCache` evaluates one position at a
  time against cached keys/values. :func:`forward_sequence`, cached stepping
  and rollouts all run through it, which is what makes cached and uncached
  rollouts agree bit for bit (BLAS results depend on matrix shapes, so the
  batched pass agrees with them only to rounding).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ConfigurationError, ContractError
from ..neuralcore import LayerNorm, Linear, make_rng, normal, ops


@dataclass(frozen=True)
class AttentionConfig:
    d_z: int = 16
    d_model: int = 128
    heads: int = 4
    layers: int = 8
    window: int = 512
    d_qk: int | None = None
    ffn_mult: int = 4
    ln_eps: float = 1e-5
    activation: str = "relu"
    z_shift: float = 0.0
    z_scale: float = 1.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigurationError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.window < 1:
            raise ConfigurationError("window must be >= 1")
        if self.activation != "relu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        if self.d_qk is None:
            object.__setattr__(self, "d_qk", self.d_model // self.heads)
        if not self.z_scale > 0:
            raise ConfigurationError("z_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def attend(queries: torch.Tensor, keys: torch.Tensor, values: torch.Tensor, causal: bool = False, scale: float | None = None):
    """Softmax-weighted sums of ``values``; returns ``(outputs, weights)``.

    Shapes ``(..., Nq, d)``, ``(..., Nk, d)``, ``(..., Nk, dv)``. With ``causal``
    the query at position ``n`` (aligned to the end of the key sequence) only
    sees keys ``<= n``.
    """
    if keys.shape[-2] == 0:
        raise ContractError("attention over an empty key set")
    if keys.shape[-2] != values.shape[-2]:
        raise ContractError(f"{keys.shape[-2]} keys but {values.shape[-2]} values")
    if queries.shape[-1] != keys.shape[-1]:
        raise ContractError("query and key widths differ")
    scale = 1.0 / math.sqrt(queries.shape[-1]) if scale is None else scale
    logits = ops.scale(ops.matmul(queries, keys.transpose(-1, -2)), scale)
    if causal:
        nq, nk = queries.shape[-2], keys.shape[-2]
        mask = torch.ones(nq, nk, dtype=torch.bool).triu(1 + nk - nq)
        logits = logits.masked_fill(mask, float("-inf"))
    w = ops.softmax(logits, axis=-1)
    return ops.matmul(w, values), w


class Block(nn.Module):
    def __init__(self, cfg: AttentionConfig, rng):
        super().__init__()
        d, h = cfg.d_model, cfg.heads
        self.cfg = cfg
        self.ln1 = LayerNorm(d, cfg.ln_eps)
        self.wq = Linear(d, h * cfg.d_qk, rng)
        self.wk = Linear(d, h * cfg.d_qk, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.ln2 = LayerNorm(d, cfg.ln_eps)
        self.ff1 = Linear(d, cfg.ffn_mult * d, rng)
        self.ff2 = Linear(cfg.ffn_mult * d, d, rng)

    def _split(self, x, width):
        b, n, _ = x.shape
        return x.reshape(b, n, self.cfg.heads, width).transpose(1, 2)

    def qkv(self, x):
        a = self.ln1(x)
        return (
            self._split(self.wq(a), self.cfg.d_qk),
            self._split(self.wk(a), self.cfg.d_qk),
            self._split(self.wv(a), self.cfg.d_model // self.cfg.heads),
        )

    def finish(self, x, att):
        b, _, n, _ = att.shape
        x = x + self.wo(att.transpose(1, 2).reshape(b, n, self.cfg.d_model))
        return x + self.ff2(ops.relu(self.ff1(self.ln2(x))))


class AttentionPropagator(nn.Module):
    """Predicts ``z_(n+1)`` as ``z_n`` plus a learned increment from the history window."""

    def __init__(self, cfg: AttentionConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = make_rng(seed, 0xA7)
        self.embed = Linear(cfg.d_z, cfg.d_model, rng)
        self.pos = nn.Parameter(0.02 * normal(rng, (cfg.window, cfg.d_model)))
        self.blocks = nn.ModuleList(Block(cfg, rng) for _ in range(cfg.layers))
        self.ln_f = LayerNorm(cfg.d_model, cfg.ln_eps)
        self.head = Linear(cfg.d_model, cfg.d_z, rng, zero=True)

    def normalise(self, z):
        return (z - self.cfg.z_shift) / self.cfg.z_scale

    def readout(self, x, z_last):
        return z_last + self.head(self.ln_f(x)) * self.cfg.z_scale

    def check_input(self, zs: torch.Tensor) -> torch.Tensor:
        if zs.ndim == 2:
            zs = zs[None]
        if zs.ndim != 3 or zs.shape[-1] != self.cfg.d_z:
            raise ContractError(f"expected macro states (B, N, {self.cfg.d_z}), got {tuple(zs.shape)}")
        return zs


def forward_masked(model: AttentionPropagator, zs: torch.Tensor) -> torch.Tensor:
    """Batched causal pass: ``(B, N, d_z) -> (B, N, d_z)``; row ``n`` predicts ``z_(n+1)``."""
    squeeze = zs.ndim == 2
    zs = model.check_input(zs)
    n = zs.shape[1]
    if n > model.cfg.window:
        raise ContractError(f"sequence of {n} states exceeds the attention window {model.cfg.window}")
    x = model.embed(model.normalise(zs)) + model.pos[:n]
    for blk in model.blocks:
        q, k, v = blk.qkv(x)
        att, _ = attend(q, k, v, causal=True)
        x = blk.finish(x, att)
    out = model.readout(x, zs)
    return out[0] if squeeze else out


class KVCache:
    """Per-layer key/value buffers over a window of at most ``capacity`` states.

    The raw macro states are kept alongside the keys/values in FIFO order. Keys
    and values above the first layer depend on every earlier state in the
    window, so evicting the oldest state invalidates them; the cache then
    re-primes itself from the retained states.
    """

    def __init__(self, model: AttentionPropagator, batch: int, dtype=None):
        cfg = model.cfg
        dtype = dtype or next(model.parameters()).dtype
        self.model = model
        self.capacity = cfg.window
        self.batch = batch
        dv = cfg.d_model // cfg.heads
        self.keys = [torch.zeros(batch, cfg.heads, cfg.window, cfg.d_qk, dtype=dtype) for _ in range(cfg.layers)]
        self.values = [torch.zeros(batch, cfg.heads, cfg.window, dv, dtype=dtype) for _ in range(cfg.layers)]
        self.states = torch.zeros(batch, cfg.window, cfg.d_z, dtype=dtype)
        self.length = 0
        self.evictions = 0

    def __len__(self) -> int:
        return self.length

    def _advance(self, z: torch.Tensor) -> torch.Tensor:
        """Run position ``self.length`` through every layer, filling the buffers."""
        m, p = self.model, self.length
        x = m.embed(m.normalise(z))[:, None, :] + m.pos[p : p + 1]
        for layer, blk in enumerate(m.blocks):
            q, k, v = blk.qkv(x)
            self.keys[layer][:, :, p : p + 1] = k
            self.values[layer][:, :, p : p + 1] = v
            att, _ = attend(q, self.keys[layer][:, :, : p + 1], self.values[layer][:, :, : p + 1])
            x = blk.finish(x, att)
        self.states[:, p] = z
        self.length = p + 1
        return m.readout(x[:, 0], z)

    def push(self, z: torch.Tensor) -> torch.Tensor:
        """Append ``z`` (B, d_z); returns the prediction of the following state."""
        if z.shape != (self.batch, self.model.cfg.d_z):
            raise ContractError(f"cache expects states of shape ({self.batch}, {self.model.cfg.d_z}), got {tuple(z.shape)}")
        if self.length < self.capacity:
            return self._advance(z)
        kept = self.states[:, 1:].clone()
        self.length = 0
        self.evictions += 1
        for j in range(kept.shape[1]):
            self._advance(kept[:, j])
        return self._advance(z)


def forward_sequence(model: AttentionPropagator, zs: torch.Tensor) -> torch.Tensor:
    """Reference causal pass through the incremental kernel; ``(B, N, d_z) -> (B, N, d_z)``."""
    squeeze = zs.ndim == 2
    zs = model.check_input(zs)
    if zs.shape[1] > model.cfg.window:
        raise ContractError(f"sequence of {zs.shape[1]} states exceeds the attention window {model.cfg.window}")
    cache = KVCache(model, zs.shape[0], zs.dtype)
    out = torch.stack([cache.push(zs[:, n]) for n in range(zs.shape[1])], dim=1)
    return out[0] if squeeze else out


def cached_step(model: AttentionPropagator, cache: KVCache, z_new: torch.Tensor) -> torch.Tensor:
    if cache.model is not model:
        raise ContractError("cache was built for a different model")
    return cache.push(z_new)
