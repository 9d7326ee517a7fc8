"""Named parameter store with Adam moments."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ContractError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class ParamStore:
    """Owns the trainable tensors of one model plus their optimizer state."""

    def __init__(self, params: "OrderedDict[str, torch.Tensor] | dict[str, torch.Tensor]"):
        self.params: OrderedDict[str, torch.Tensor] = OrderedDict(params)
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.step_count = 0

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParamStore":
        return cls(OrderedDict(module.named_parameters()))

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        tot = 0.0
        for p in self.params.values():
            if p.grad is not None:
                tot += float((p.grad.double() ** 2).sum())
        return tot**0.5


def adam_step(store: ParamStore, cfg: AdamConfig = AdamConfig(), clip_norm: float | None = None) -> ParamStore:
    """One Adam update of every parameter in ``store``; gradients are cleared afterwards."""
    missing = [k for k, p in store.params.items() if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    factor = 1.0
    if clip_norm is not None:
        gn = store.grad_norm()
        if gn > clip_norm:
            factor = clip_norm / gn
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    with torch.no_grad():
        for k, p in store.params.items():
            g = p.grad * factor if factor != 1.0 else p.grad
            m, v = store.m[k], store.v[k]
            m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
            denom = (v / bc2).sqrt_().add_(cfg.eps)
            p.addcdiv_(m, denom, value=-cfg.lr / bc1)
    store.zero_grad()
    return store
