"""Shared fixtures: synthetic datasets and a finite-difference gradient oracle."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
import torch

from gled.neuralcore import ops

N_MICRO, N_MACRO = 64, 16
X = np.arange(N_MICRO) / N_MICRO
SUBGRID_MODE = np.sin(2 * np.pi * 8 * X)  # vanishes on every 4th node, invisible to the restriction


def smooth_fields(rng: np.random.Generator, m: int, n: int = N_MICRO, modes: int = 6) -> np.ndarray:
    """Random periodic fields with modes 1..modes and 1/k amplitude decay."""
    x = np.arange(n) / n
    k = np.arange(1, modes + 1)
    a = rng.standard_normal((m, modes)) / k
    b = rng.standard_normal((m, modes)) / k
    phase = 2 * np.pi * np.outer(k, x)
    return a @ np.cos(phase) + b @ np.sin(phase)


def trig_lift(z: np.ndarray, n: int = N_MICRO) -> np.ndarray:
    """Band-limited (trigonometric) interpolation of periodic samples to ``n`` points; a fixed linear map."""
    d = z.shape[-1]
    zh = np.fft.rfft(z, axis=-1)
    out = np.zeros(z.shape[:-1] + (n // 2 + 1,), complex)
    out[..., : d // 2 + 1] = zh * (n / d)
    out[..., d // 2] *= 0.5
    return np.fft.irfft(out, n=n, axis=-1)


def linear_lift_dataset(rng: np.random.Generator, m: int, noise: float = 0.01) -> np.ndarray:
    """Micro states ``s = L z + noise`` with ``L`` the trigonometric lifting and 1% relative noise."""
    z = smooth_fields(rng, m)[:, :: N_MICRO // N_MACRO]
    s = trig_lift(z)
    return s + noise * s.std() * rng.standard_normal(s.shape)


def subgrid_dataset(rng: np.random.Generator, m: int, amp: float = 0.3) -> np.ndarray:
    """Like :func:`linear_lift_dataset` plus a random multiple of a mode the encoder cannot see."""
    z = smooth_fields(rng, m)[:, :: N_MICRO // N_MACRO]
    return trig_lift(z) + amp * rng.standard_normal((m, 1)) * SUBGRID_MODE


def fd_check(fn, inputs: list[torch.Tensor], rng: np.random.Generator, h: float = 1e-6) -> float:
    """Relative mismatch between the autograd directional derivative and a central difference.

    ``fn`` maps the inputs to a tensor; it is contracted with a fixed random
    weight so every output entry contributes.
    """
    inputs = [x.detach().clone().double().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    w = torch.from_numpy(rng.standard_normal(tuple(out.shape)))
    loss = (out * w).sum()
    grads = torch.autograd.grad(loss, inputs, allow_unused=True)
    dirs = [torch.from_numpy(rng.standard_normal(tuple(x.shape))) for x in inputs]
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs) if g is not None)
    with torch.no_grad():
        plus = float((fn(*[x + h * d for x, d in zip(inputs, dirs)]) * w).sum())
        minus = float((fn(*[x - h * d for x, d in zip(inputs, dirs)]) * w).sum())
    numeric = (plus - minus) / (2 * h)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


@contextmanager
def relu_patterns():
    """Record the on/off pattern of every ``ops.relu`` call made inside the block."""
    masks: list[torch.Tensor] = []
    original = ops.relu

    def recording(a):
        masks.append((a > 0).detach().clone())
        return original(a)

    ops.relu = recording
    try:
        yield masks
    finally:
        ops.relu = original


def _same_pattern(a: list[torch.Tensor], b: list[torch.Tensor]) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def module_fd_check(module: torch.nn.Module, fn, rng: np.random.Generator, h: float = 1e-7, inputs=(), tries: int = 20):
    """Directional check over every parameter of ``module`` (and the tensors in ``inputs``) at once.

    ``fn()`` returns the output tensor. Central differences are only meaningful
    on a smooth piece of a ReLU network, so directions whose +-h probes flip any
    ReLU are retried at smaller steps, then redrawn. Returns ``(relative error, redraws)``.
    """
    leaves = list(module.parameters()) + list(inputs)
    out = fn()
    w = torch.from_numpy(rng.standard_normal(tuple(out.shape))).to(out.dtype)
    grads = torch.autograd.grad((out * w).sum(), leaves, allow_unused=True)
    for attempt in range(tries):
        dirs = [torch.from_numpy(rng.standard_normal(tuple(p.shape))).to(p.dtype) for p in leaves]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs) if g is not None)
        # a kink crossing is rarer at smaller steps; shrink h before giving up on a direction
        for step in (h, h / 4, h / 16):
            vals, pats = [], []
            with torch.no_grad():
                for sign in (1.0, -1.0):
                    for p, d in zip(leaves, dirs):
                        p.add_(sign * step * d)
                    with relu_patterns() as masks:
                        vals.append(float((fn() * w).sum()))
                    pats.append(masks)
                    for p, d in zip(leaves, dirs):
                        p.sub_(sign * step * d)
            if _same_pattern(*pats):
                numeric = (vals[0] - vals[1]) / (2 * step)
                return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12), attempt
    raise AssertionError(f"every one of {tries} probe directions crossed a ReLU kink")


def jitter_parameters(module: torch.nn.Module, rng: np.random.Generator, scale: float = 0.1) -> None:
    """Move every parameter off its initial value (zero-initialized layers would hide gradient paths)."""
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.from_numpy(rng.standard_normal(tuple(p.shape))).to(p.dtype))
