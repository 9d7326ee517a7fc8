"""Decoder training: expected L2 error of the clean-state prediction over noise levels."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ContractError, TrainingDivergedError
from ..neuralcore import AdamConfig, ParamStore, adam_step, make_rng, normal, ops
from ..scalespace import RestrictionSpec, restrict
from .denoiser import DenoiserNet
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecoderTrainConfig:
    epochs: int = 20
    steps_per_epoch: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    clip_norm: float | None = 1.0
    seed: int = 0


def decoder_loss(net, s: torch.Tensor, z: torch.Tensor, idx: torch.Tensor, xi: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Batch mean of ``||s_hat(z, s + sigma_i xi, i) - s||_2``."""
    sig = torch.as_tensor(sched.sigmas, dtype=s.dtype)[idx - 1]
    eps = s + sig.reshape((-1,) + (1,) * (s.ndim - 1)) * xi
    diff = net(z, eps, idx) - s
    return ops.mean(ops.l2_norm(diff.reshape(diff.shape[0], -1), axis=1))


def train_decoder(
    net: DenoiserNet,
    micro_states: np.ndarray,
    spec: RestrictionSpec,
    sched: NoiseSchedule,
    cfg: DecoderTrainConfig = DecoderTrainConfig(),
    adam: AdamConfig | None = None,
    callback=None,
) -> list[float]:
    """Fit ``net`` on micro snapshots ``(M, *micro_shape)``; returns the per-epoch mean loss.

    Macro states are obtained with the non-trainable restriction, so nothing
    here depends on the latent propagator.
    """
    data = np.asarray(micro_states)
    if data.shape[0] == 0:
        raise ContractError("decoder training needs at least one micro state")
    if tuple(data.shape[1:]) != tuple(spec.micro_shape):
        raise ContractError(f"micro states have shape {data.shape[1:]}, restriction expects {spec.micro_shape}")
    dtype = next(net.parameters()).dtype
    adam = adam or AdamConfig(lr=cfg.lr)
    store = ParamStore.from_module(net)
    rng = make_rng(cfg.seed, 0xDEC)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        tot = 0.0
        for _ in range(cfg.steps_per_epoch):
            pick = rng.integers(0, len(data), size=cfg.batch_size)
            s_np = data[pick]
            s = torch.from_numpy(np.ascontiguousarray(s_np)).to(dtype)
            z = torch.from_numpy(np.ascontiguousarray(restrict(s_np, spec))).to(dtype)
            idx = torch.from_numpy(rng.integers(1, sched.count + 1, size=cfg.batch_size))
            xi = normal(rng, s.shape, dtype)
            loss = decoder_loss(net, s, z, idx, xi, sched)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"decoder loss became non-finite at epoch {epoch}")
            ops.backward(loss)
            adam_step(store, adam, clip_norm=cfg.clip_norm)
            tot += loss.item()
        history.append(tot / cfg.steps_per_epoch)
        log.info("decoder epoch=%d loss=%.6g seconds=%.1f", epoch, history[-1], time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, history[-1])
    return history
