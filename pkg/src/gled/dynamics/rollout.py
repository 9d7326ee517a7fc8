"""Autoregressive generation of macro trajectories."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from ..errors import ContractError
from .model import AttentionPropagator, KVCache, cached_step, forward_sequence

log = logging.getLogger(__name__)


@dataclass
class Rollout:
    states: torch.Tensor  # (B, n_done, d_z) predicted continuation
    complete: bool = True
    message: str = ""


def rollout(model: AttentionPropagator, warmup: torch.Tensor, n_steps: int, use_cache: bool = True) -> Rollout:
    """Continue ``warmup`` (B, W, d_z) by ``n_steps`` predicted states.

    With ``use_cache=False`` every step re-runs :func:`forward_sequence` on the
    last ``window`` states instead of reusing cached keys and values.
    """
    squeeze = warmup.ndim == 2
    warmup = model.check_input(warmup)
    if warmup.shape[1] < 1:
        raise ContractError("rollout needs at least one warm-up state")
    if n_steps < 0:
        raise ContractError("n_steps must be >= 0")
    b, window = warmup.shape[0], model.cfg.window
    out: list[torch.Tensor] = []
    complete, message = True, ""
    with torch.no_grad():
        if n_steps == 0:
            states = warmup.new_zeros(b, 0, model.cfg.d_z)
            return Rollout(states[0] if squeeze else states)
        if use_cache:
            cache = KVCache(model, b, warmup.dtype)
            for n in range(warmup.shape[1]):
                nxt = cached_step(model, cache, warmup[:, n])
        else:
            history = warmup[:, -window:]
            nxt = forward_sequence(model, history)[:, -1]
        for step in range(n_steps):
            if not torch.isfinite(nxt).all():
                complete, message = False, f"non-finite macro state at step {step}"
                log.warning("rollout aborted: %s", message)
                break
            out.append(nxt)
            if step == n_steps - 1:
                break
            if use_cache:
                nxt = cached_step(model, cache, nxt)
            else:
                history = torch.cat([history, nxt[:, None]], dim=1)[:, -window:]
                nxt = forward_sequence(model, history)[:, -1]
    states = torch.stack(out, dim=1) if out else warmup.new_zeros(b, 0, model.cfg.d_z)
    return Rollout(states[0] if squeeze else states, complete, message)
