"""Teacher-forced training of the attention propagator."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ContractError, TrainingDivergedError
from ..neuralcore import AdamConfig, ParamStore, adam_step, make_rng, normal, ops
from .model import AttentionPropagator, forward_masked

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PropagatorTrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 3e-4
    clip_norm: float | None = 1.0
    # std of Gaussian jitter on the inputs (in units of z_scale); targets stay clean
    input_noise: float = 0.0
    seed: int = 0
    max_batches_per_epoch: int | None = None


def propagator_loss(model: AttentionPropagator, zs: torch.Tensor, inputs: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over sequences and positions of ``||z_(n+1) - A(z_0..z_n)||_2``.

    One masked pass scores every prefix of each sequence at once.
    """
    inp = zs[:, :-1] if inputs is None else inputs
    pred = forward_masked(model, inp)
    err = pred - zs[:, 1:]
    return ops.mean(ops.l2_norm(err, axis=-1))


def train_propagator(
    model: AttentionPropagator,
    sequences: np.ndarray,
    cfg: PropagatorTrainConfig = PropagatorTrainConfig(),
    adam: AdamConfig | None = None,
    callback=None,
) -> list[float]:
    """Fit on macro sequences ``(M, T, d_z)``; sequences longer than ``window + 1`` are cropped at random offsets."""
    data = np.asarray(sequences)
    if data.ndim != 3 or data.shape[-1] != model.cfg.d_z:
        raise ContractError(f"expected macro sequences (M, T, {model.cfg.d_z}), got {data.shape}")
    if data.shape[0] == 0 or data.shape[1] < 2:
        raise ContractError("need at least one sequence of two or more states")
    dtype = next(model.parameters()).dtype
    adam = adam or AdamConfig(lr=cfg.lr)
    store = ParamStore.from_module(model)
    rng = make_rng(cfg.seed, 0xA77)
    length = min(data.shape[1], model.cfg.window + 1)
    n_batches = max(1, int(np.ceil(len(data) / cfg.batch_size)))
    if cfg.max_batches_per_epoch:
        n_batches = min(n_batches, cfg.max_batches_per_epoch)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(data))
        tot = 0.0
        for b in range(n_batches):
            pick = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if len(pick) == 0:
                pick = rng.integers(0, len(data), size=cfg.batch_size)
            off = rng.integers(0, data.shape[1] - length + 1, size=len(pick))
            batch = np.stack([data[p, o : o + length] for p, o in zip(pick, off)])
            zs = torch.from_numpy(batch).to(dtype)
            inputs = None
            if cfg.input_noise > 0:
                jitter = cfg.input_noise * model.cfg.z_scale * normal(rng, zs[:, :-1].shape, dtype)
                inputs = zs[:, :-1] + jitter
            loss = propagator_loss(model, zs, inputs)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"propagator loss became non-finite at epoch {epoch}")
            ops.backward(loss)
            adam_step(store, adam, clip_norm=cfg.clip_norm)
            tot += loss.item()
        history.append(tot / n_batches)
        log.info("propagator epoch=%d loss=%.6g seconds=%.1f", epoch, history[-1], time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, history[-1])
    return history
