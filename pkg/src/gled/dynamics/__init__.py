"""Latent propagator: causal multi-head attention over a bounded history window."""

from .model import AttentionConfig, AttentionPropagator, KVCache, attend, cached_step, forward_masked, forward_sequence
from .rollout import Rollout, rollout
from .training import PropagatorTrainConfig, propagator_loss, train_propagator

__all__ = [
    "AttentionConfig",
    "AttentionPropagator",
    "KVCache",
    "attend",
    "cached_step",
    "forward_masked",
    "forward_sequence",
    "Rollout",
    "rollout",
    "PropagatorTrainConfig",
    "propagator_loss",
    "train_propagator",
]
