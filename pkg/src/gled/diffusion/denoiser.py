"""Conditional denoiser ``s_hat(z, eps_i, i)`` for periodic 1D fields.

Two-level U-Net: the macro state is lifted to the micro grid and fed as an
extra channel at both resolutions; the noise index enters through a
sinusoidal embedding that produces a per-layer scale and shift.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from ..errors import ConfigurationError, ContractError, NumericalError
from ..neuralcore import Conv1dPeriodic, Linear, make_rng, ops
from ..scalespace import RestrictionSpec, lift_matrix


@dataclass(frozen=True)
class DenoiserConfig:
    micro_shape: tuple[int, ...] = (64,)
    macro_shape: tuple[int, ...] = (16,)
    restriction_mode: str = "subsample"
    periodic: tuple[bool, ...] = ()
    channels: int = 32
    conv_layers: int = 4
    kernel: int = 5
    embed_width: int = 32
    sigma_data: float = 1.0
    noise_levels: tuple[float, ...] = field(default=())

    def restriction(self) -> RestrictionSpec:
        return RestrictionSpec(self.micro_shape, self.macro_shape, self.restriction_mode, self.periodic)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("micro_shape", "macro_shape", "periodic", "noise_levels"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        for key in ("micro_shape", "macro_shape", "periodic", "noise_levels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class _Film(nn.Module):
    def __init__(self, emb: int, width: int, rng):
        super().__init__()
        self.proj = Linear(emb, 2 * width, rng, zero=True)

    def forward(self, h, e):
        gamma, beta = self.proj(e).chunk(2, dim=-1)
        return h * (1.0 + gamma[..., None]) + beta[..., None]


class DenoiserNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig, seed: int = 0):
        super().__init__()
        if len(cfg.micro_shape) != 1:
            raise ConfigurationError(
                f"the convolutional denoiser handles 1D periodic fields; got micro shape {cfg.micro_shape}"
            )
        if cfg.conv_layers != 4:
            raise ConfigurationError("the two-level U-Net layout has exactly 4 convolutional layers")
        n = cfg.micro_shape[0]
        if n % 2:
            raise ConfigurationError("micro length must be even for the two-level U-Net")
        self.cfg = cfg
        spec = cfg.restriction()
        self.register_buffer("lift", torch.from_numpy(lift_matrix(spec).astype(np.float32)), persistent=False)
        rng = make_rng(seed, 0xD0)
        w, e, k = cfg.channels, 2 * cfg.embed_width, cfg.kernel
        self.emb1 = Linear(cfg.embed_width, e, rng)
        self.emb2 = Linear(e, e, rng)
        self.conv1 = Conv1dPeriodic(2, w, rng, k)
        self.conv2 = Conv1dPeriodic(w + 1, w, rng, k)
        self.conv3 = Conv1dPeriodic(2 * w + 1, w, rng, k)
        self.conv_out = Conv1dPeriodic(w, 1, rng, k, zero=True)
        self.film1 = _Film(e, w, rng)
        self.film2 = _Film(e, w, rng)
        self.film3 = _Film(e, w, rng)

    def lifted(self, z: torch.Tensor) -> torch.Tensor:
        return ops.linear(z.reshape(z.shape[0], -1), self.lift)

    def forward(self, z: torch.Tensor, eps: torch.Tensor, i) -> torch.Tensor:
        """``z``: (B, *macro), ``eps``: (B, *micro), ``i``: int or (B,) noise indices (1-based)."""
        cfg = self.cfg
        if tuple(eps.shape[1:]) != cfg.micro_shape or tuple(z.shape[1:]) != cfg.macro_shape or z.shape[0] != eps.shape[0]:
            raise ContractError(
                f"denoiser expects z (B,{cfg.macro_shape}) and eps (B,{cfg.micro_shape}), got {tuple(z.shape)}, {tuple(eps.shape)}"
            )
        b = eps.shape[0]
        idx = torch.as_tensor(i, dtype=eps.dtype).reshape(-1).expand(b)
        sig = torch.as_tensor(cfg.noise_levels, dtype=eps.dtype)[idx.long() - 1]
        c_in = 1.0 / torch.sqrt(sig**2 + cfg.sigma_data**2)

        e = ops.sinusoidal_embed(idx, cfg.embed_width, dtype=eps.dtype)
        e = ops.relu(self.emb2(ops.relu(self.emb1(e))))

        cond = (self.lifted(z) / cfg.sigma_data)[:, None, :]
        x = (eps * c_in[:, None])[:, None, :]
        h1 = ops.relu(self.film1(self.conv1(ops.concat([x, cond], axis=1)), e))
        down = h1.reshape(b, cfg.channels, -1, 2).mean(dim=-1)
        cond2 = cond.reshape(b, 1, -1, 2).mean(dim=-1)
        h2 = ops.relu(self.film2(self.conv2(ops.concat([down, cond2], axis=1)), e))
        up = torch.repeat_interleave(h2, 2, dim=-1)
        h3 = ops.relu(self.film3(self.conv3(ops.concat([up, h1, cond], axis=1)), e))
        out = self.conv_out(h3)[:, 0, :] * cfg.sigma_data
        return out


def denoise_predict(net: DenoiserNet, z: torch.Tensor, eps: torch.Tensor, i) -> torch.Tensor:
    """Network estimate of the clean micro state; rejects non-finite output."""
    out = net(z, eps, i)
    if not torch.isfinite(out).all():
        raise NumericalError("denoiser produced non-finite values")
    return out
