"""Physics guidance through virtual observables of a residual ``R(H(s)) = 0``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from ..errors import ConfigurationError
from ..neuralcore import ops
from .schedule import reverse_variance

Denoiser = Callable[[torch.Tensor, torch.Tensor, int], torch.Tensor]


@dataclass
class ResidualSpec:
    """Observable ``H``, residual ``R`` and guidance strengths.

    ``sigma_r`` only scales the virtual likelihood (see :meth:`log_likelihood`);
    the shift applied during sampling is governed by ``beta_guide`` and
    ``sigma_guide``.
    """

    observable: Callable[[torch.Tensor], torch.Tensor]
    residual: Callable[[torch.Tensor], torch.Tensor]
    sigma_r: float = 1.0
    beta_guide: float = 1.0
    sigma_guide: float = 0.002
    name: str = "custom"

    def __post_init__(self):
        if not self.sigma_r > 0 or not self.sigma_guide > 0 or self.beta_guide < 0:
            raise ConfigurationError("need sigma_r > 0, sigma_guide > 0 and beta_guide >= 0")

    def residual_norm(self, s: torch.Tensor) -> torch.Tensor:
        """Per-sample ``||R(H(s))||_2`` for a batch ``s`` of shape (B, ...)."""
        r = self.residual(self.observable(s))
        return ops.l2_norm(r.reshape(r.shape[0], -1), axis=1)

    def log_likelihood(self, s: torch.Tensor) -> torch.Tensor:
        """Virtual log-likelihood of observing ``R = 0``, up to a constant."""
        r = self.residual(self.observable(s))
        return -0.5 * (r.reshape(r.shape[0], -1) ** 2).sum(dim=1) / self.sigma_r**2


def pin_observable(weights, target, **kw) -> ResidualSpec:
    """Linear observable ``H(s) = W vec(s)`` pinned to ``target``."""
    w = torch.as_tensor(np.asarray(weights, dtype=np.float64))
    h = torch.as_tensor(np.asarray(target, dtype=np.float64))
    if w.ndim != 2 or h.shape != (w.shape[0],):
        raise ConfigurationError(f"pin_observable needs weights (m, n) and target (m,), got {tuple(w.shape)}, {tuple(h.shape)}")

    def observable(s):
        return ops.linear(s.reshape(s.shape[0], -1), w.to(s.dtype))

    def residual(obs):
        return obs - h.to(obs.dtype)

    return ResidualSpec(observable, residual, name="pin_observable", **kw)


def pin_indices(indices, values, size: int, **kw) -> ResidualSpec:
    """Pin selected flat grid points of the field to ``values``."""
    idx = np.asarray(indices, dtype=int)
    w = np.zeros((len(idx), size))
    w[np.arange(len(idx)), idx] = 1.0
    return pin_observable(w, values, **kw)


def reynolds_stress(u: torch.Tensor, wall_axis: int = 1) -> torch.Tensor:
    """Profiles of ``<u_a' u_b'>`` (a <= b) along the wall-normal axis.

    ``u`` has shape (B, 3, *spatial); averages run over every spatial axis except
    ``wall_axis`` (0-based among the spatial axes). Returns (B, 6, n_wall) in the
    order uu, uv, uw, vv, vw, ww.
    """
    spatial = list(range(2, u.ndim))
    avg_axes = [ax for k, ax in enumerate(spatial) if k != wall_axis]
    mean = u.mean(dim=avg_axes, keepdim=True)
    f = u - mean
    pairs = [(a, b) for a in range(u.shape[1]) for b in range(a, u.shape[1])]
    prof = [ops.mean(f[:, a] * f[:, b], axis=[ax - 1 for ax in avg_axes]) for a, b in pairs]
    return torch.stack(prof, dim=1)


def reynolds_stress_target(target, wall_axis: int = 1, **kw) -> ResidualSpec:
    """Residual between the snapshot Reynolds-stress profiles and a target tensor (6, n_wall)."""
    tgt = torch.as_tensor(np.asarray(target, dtype=np.float64))

    def observable(s):
        return reynolds_stress(s, wall_axis)

    def residual(obs):
        return obs - tgt.to(obs.dtype)

    return ResidualSpec(observable, residual, name="reynolds_stress_target", **kw)


def residual_direction(denoiser: Denoiser, rs: ResidualSpec, z: torch.Tensor, eps: torch.Tensor, i: int):
    """Unit descent direction of ``||R(H(s_hat(z, eps, i)))||`` with respect to ``eps``.

    Returns ``(n, s_hat, degenerate)``: ``n`` has the shape of ``eps`` with unit
    norm per sample, ``s_hat`` is the (detached) prediction of the same forward
    pass, and ``degenerate`` flags samples whose gradient vanished (their ``n`` is 0).
    """
    x = eps.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        s_hat = denoiser(z, x, i)
        norms = rs.residual_norm(s_hat)
        if norms.requires_grad:
            (g,) = torch.autograd.grad(norms.sum(), x, allow_unused=True)
        else:  # prediction does not depend on eps at all
            g = None
    if g is None:
        g = torch.zeros_like(x)
    flat = g.reshape(g.shape[0], -1)
    gn = torch.sqrt((flat * flat).sum(dim=1))
    degenerate = ~(gn > 0) | ~torch.isfinite(gn)
    safe = torch.where(degenerate, torch.ones_like(gn), gn)
    n = -flat / safe[:, None]
    n = torch.where(degenerate[:, None], torch.zeros_like(n), n)
    return n.reshape(g.shape), s_hat.detach(), degenerate


def guidance_shift(n: torch.Tensor, sigma_i: float, sigma_next: float, rs: ResidualSpec) -> torch.Tensor:
    """``beta_guide * max(reverse variance, sigma_guide^2) * n``."""
    return rs.beta_guide * max(reverse_variance(sigma_i, sigma_next), rs.sigma_guide**2) * n
