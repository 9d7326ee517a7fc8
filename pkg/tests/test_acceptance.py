"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``; the verdicts are also
repeated in the terminal summary.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
import torch

from gled import statistics as S
from gled.diffusion import (
    DecoderTrainConfig,
    DenoiserConfig,
    DenoiserNet,
    build_schedule,
    guided_sample,
    pin_observable,
    sample,
    train_decoder,
)
from gled.dynamics import AttentionConfig, AttentionPropagator, attend, forward_masked, forward_sequence, rollout
from gled.kssolver import KsConfig, precompute_tables, random_initial_state, simulate_batch, step_spectral, trajectory_rng
from gled.neuralcore import make_rng
from gled.orchestrator import forecast_pipeline, ingest, preset, with_overrides
from gled.gledfile import read_trajectory
from gled.scalespace import RestrictionSpec, restrict

from helpers import (
    N_MICRO,
    SUBGRID_MODE,
    fd_check,
    jitter_parameters,
    linear_lift_dataset,
    module_fd_check,
    subgrid_dataset,
)
from test_neuralcore import PRIMITIVES

KS_SPEC = RestrictionSpec((64,), (16,))


# ------------------------------------------------------------------ 1


def test_criterion_1_gradients(criterion):
    t0 = time.perf_counter()
    worst = {}
    for name, (build, fn) in PRIMITIVES.items():
        worst[name] = max(fd_check(fn, build(np.random.default_rng(s)), np.random.default_rng(s + 10_000)) for s in range(100))

    sched = build_schedule()
    den, att = [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net = DenoiserNet(DenoiserConfig(sigma_data=1.0, noise_levels=sched.sigmas), seed=seed).double()
        jitter_parameters(net, rng, 0.1)
        z = torch.from_numpy(rng.standard_normal((2, 16))).requires_grad_(True)
        eps = torch.from_numpy(rng.standard_normal((2, 64))).requires_grad_(True)
        idx = int(rng.integers(1, 21))
        den.append(module_fd_check(net, lambda: net(z, eps, idx), rng, inputs=(z, eps))[0])

        model = AttentionPropagator(AttentionConfig(), seed=seed).double()  # KS architecture
        jitter_parameters(model, rng, 0.02)
        zs = torch.from_numpy(rng.standard_normal((2, 5, 16))).requires_grad_(True)
        att.append(module_fd_check(model, lambda: forward_masked(model, zs), rng, inputs=(zs,))[0])
    worst["denoiser"] = max(den)
    worst["attention"] = max(att)
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = max(worst.values()) <= 1e-5 and elapsed < 120
    criterion(1, ok, f"worst rel err {worst[top]:.1e} ({top}) over 100 seeds x {len(worst)} checks; {elapsed:.0f}s")
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_2_integrator(criterion):
    t0 = time.perf_counter()
    cfg = KsConfig()
    tables = precompute_tables(cfg)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    k = 2 * np.pi / cfg.domain_length * np.fft.fftfreq(64, d=1 / 64)
    expect = np.exp((k**2 - k**4) * cfg.micro_step)
    lin_err = np.max(np.abs(step_spectral(v, tables, nonlinear=False) / v - expect) / expect)

    u0 = random_initial_state(cfg, trajectory_rng(11, 0))

    def final(dt):
        c = KsConfig(micro_step=dt, macro_step=1.0)
        return simulate_batch(u0[None], c, 1.0)[0, -1]

    ref = final(cfg.micro_step / 8)
    e1 = np.linalg.norm(final(cfg.micro_step) - ref)
    e2 = np.linalg.norm(final(cfg.micro_step / 2) - ref)
    order = math.log2(e1 / e2)
    elapsed = time.perf_counter() - t0
    ok = lin_err < 1e-12 and order >= 3.8 and elapsed < 60
    criterion(2, ok, f"linear rel err {lin_err:.1e}, observed order {order:.3f}; {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_3_chain_consistency(criterion):
    t0 = time.perf_counter()
    sched = build_schedule(0.002, 80.0, 20)
    s = torch.from_numpy(np.random.default_rng(0).standard_normal((10_000, 64)))
    oracle = lambda z, eps, i: s  # noqa: E731
    res = sample(oracle, torch.zeros(10_000, 16, dtype=torch.float64), sched, make_rng(0), micro_shape=(64,), full=True)
    std = (res.eps1 - s).std().item()
    rel = abs(std / sched.sigma(1) - 1)
    exact = torch.max(torch.abs(res.sample - s)).item()
    elapsed = time.perf_counter() - t0
    ok = rel <= 0.02 and res.evaluations == 20 and exact <= 1e-6 * sched.sigma(1) and elapsed < 120
    criterion(3, ok, f"residual std {std:.5f} vs sigma_1 0.002 (rel {rel:.2%}); {res.evaluations} evaluations; {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_4_decoder_learning(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    train, test = linear_lift_dataset(rng, 20_000), linear_lift_dataset(rng, 256)
    sched = build_schedule()
    net = DenoiserNet(DenoiserConfig(sigma_data=float(train.std()), noise_levels=sched.sigmas), seed=0)
    train_decoder(net, train, KS_SPEC, sched, DecoderTrainConfig(epochs=10, steps_per_epoch=200, batch_size=128, lr=2e-3))
    z = torch.from_numpy(restrict(test, KS_SPEC)).float()
    out = sample(net, z, sched, make_rng(1)).double().numpy()
    rel = np.linalg.norm(out - test) / np.linalg.norm(test)
    cons = np.linalg.norm(restrict(out, KS_SPEC) - z.numpy()) / np.linalg.norm(z.numpy())
    elapsed = time.perf_counter() - t0
    ok = rel < 0.05 and elapsed < 600
    criterion(4, ok, f"held-out relative L2 error {rel:.2%} (restriction consistency {cons:.2%}); {elapsed:.0f}s")
    assert ok and cons < 0.10


# ------------------------------------------------------------------ 5


GUIDE_BETA, GUIDE_SIGMA = 3.0, 0.002


def test_criterion_5_guidance(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    train, test = subgrid_dataset(rng, 20_000), subgrid_dataset(rng, 64)
    sched = build_schedule()
    net = DenoiserNet(DenoiserConfig(sigma_data=float(train.std()), noise_levels=sched.sigmas), seed=0)
    train_decoder(net, train, KS_SPEC, sched, DecoderTrainConfig(epochs=25, steps_per_epoch=200, batch_size=128, lr=2e-3))
    z = torch.from_numpy(restrict(test, KS_SPEC)).float()
    # pin the amplitude of the sub-grid mode (invisible to the encoder) to zero
    weights = (2.0 / N_MICRO) * SUBGRID_MODE[None, :]
    neutral = pin_observable(weights, [0.0], beta_guide=0.0)
    active = pin_observable(weights, [0.0], beta_guide=GUIDE_BETA, sigma_guide=GUIDE_SIGMA)

    plain = sample(net, z, sched, make_rng(1), full=True)
    zero = guided_sample(net, z, sched, neutral, make_rng(1), full=True)
    identical = torch.equal(plain.sample, zero.sample) and torch.equal(plain.eps1, zero.eps1)
    guided = guided_sample(net, z, sched, active, make_rng(1))
    r_plain = active.residual_norm(plain.sample).mean().item()
    r_guided = active.residual_norm(guided).mean().item()
    drop = 1 - r_guided / r_plain
    elapsed = time.perf_counter() - t0
    ok = identical and drop >= 0.30 and elapsed < 300
    criterion(
        5, ok,
        f"beta=0 bit-identical: {identical}; mean |R| {r_plain:.4f} -> {r_guided:.4f} ({drop:.0%} lower); {elapsed:.0f}s",
    )
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_6_propagator(criterion):
    t0 = time.perf_counter()
    cfg = AttentionConfig(window=32)  # KS architecture with a shorter window so 2 windows of uncached steps stay cheap
    model = AttentionPropagator(cfg, seed=0)
    jitter_parameters(model, np.random.default_rng(0), 0.02)
    warm = torch.from_numpy(np.random.default_rng(1).standard_normal((2, 4, 16)).astype(np.float32))
    n = 2 * cfg.window + 8
    a = rollout(model, warm, n, use_cache=True).states
    b = rollout(model, warm, n, use_cache=False).states
    cache_ok = a.shape[1] == n and torch.equal(a, b)

    zs = torch.from_numpy(np.random.default_rng(2).standard_normal((1, 12, 16)).astype(np.float32))
    causal_ok = True
    with torch.no_grad():
        for fn in (forward_masked, forward_sequence):
            base = fn(model, zs)
            for m in range(12):
                zp = zs.clone()
                zp[:, m] += 1.0
                causal_ok &= torch.equal(fn(model, zp)[:, :m], base[:, :m])
        x = model.embed(model.normalise(zs)) + model.pos[:12]
        worst_norm = 0.0
        for blk in model.blocks:
            q, k, v = blk.qkv(x)
            att, w = attend(q, k, v, causal=True)
            worst_norm = max(worst_norm, torch.max(torch.abs(w.sum(-1) - 1)).item())
            x = blk.finish(x, att)
    elapsed = time.perf_counter() - t0
    ok = cache_ok and causal_ok and worst_norm <= 1e-6 and elapsed < 60
    criterion(6, ok, f"cached==uncached over {n} steps: {cache_ok}; causality exact: {causal_ok}; "
                     f"max |sum w - 1| {worst_norm:.1e}; {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 7


def ks_desk_config(out_dir):
    """Desk-scale KS run: dataset sizes shrink, every model hyperparameter stays at its preset value."""
    return with_overrides(
        preset("ks"),
        out_dir=str(out_dir),
        **{
            "ks.n_train": 500,
            "ks.n_valid": 50,
            "ks.n_test": 50,
            "diffusion.epochs": 20,
            "diffusion.lr": 2e-3,
            "attention.epochs": 30,
            "forecast.n_rollouts": 50,
        },
    )


@pytest.mark.slow
def test_criterion_7_ks_end_to_end(criterion, tmp_path_factory):
    t0 = time.perf_counter()
    cfg = ks_desk_config(tmp_path_factory.mktemp("ks_desk"))
    summary = forecast_pipeline(cfg)
    elapsed = time.perf_counter() - t0
    a = summary["mean_error_t_le_2"]
    b = summary["max_abs_pred"]
    full = summary["steps"] == 320 and summary["n_rollouts"] >= 50
    c = summary["ux_uxx_tv_distance"]
    dmean = abs(summary["mean_pred"] - summary["mean_truth"]) / math.sqrt(summary["var_truth"])
    dvar = abs(summary["var_pred"] / summary["var_truth"] - 1)
    ok = a <= 0.25 and b <= 5.0 and full and c <= 0.25 and dmean <= 0.10 and dvar <= 0.10 and elapsed <= 7200
    criterion(
        7, ok,
        f"(a) e(t<=2)={a:.3f} (b) max|u|={b:.2f} over {summary['steps']} steps (c) TV={c:.3f} "
        f"(d) |dmean|/std={dmean:.3f} dvar={dvar:.1%}; {elapsed / 60:.1f} min",
    )
    assert ok


# ------------------------------------------------------------------ 8


def test_criterion_8_statistics_and_ingestion(criterion, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    u = rng.standard_normal((20, 64)) + 0.2
    _, e = S.energy_spectrum(u)
    parseval = abs(2 * e.sum() + np.mean(u.mean(-1) ** 2) - np.mean(u**2)) / np.mean(u**2)
    r = S.spatial_correlation(u)
    corr_ok = r[0] == 1.0 and bool(np.all(np.abs(r) <= 1.0))
    x = np.arange(64) / 64
    _, ec = S.energy_spectrum(np.cos(2 * np.pi * 3 * x)[None])
    cos_ok = np.argmax(ec) == 2 and ec[2] / ec.sum() > 1 - 1e-12
    f = rng.standard_normal((8, 2, 6, 5))
    f[:, 1] = f[:, 0]
    p = S.mean_rms_stress(f, homogeneous_axes=[0])
    shear_ok = bool(np.allclose(p.stress, p.rms[0] ** 2, rtol=1e-12))
    field = rng.standard_normal((40, 50, 30)).astype("<f8")
    (tmp_path / "snap.bin").write_bytes(field.tobytes())
    man = ingest([tmp_path / "snap.bin"], [40, 50, 30], 4.0, tmp_path / "out")
    back = read_trajectory(man.paths()[0]).states
    bytes_ok = back.shape == (1, 40, 50, 30) and back.astype("<f8").tobytes() == field.tobytes()
    elapsed = time.perf_counter() - t0
    ok = parseval <= 1e-10 and corr_ok and cos_ok and shear_ok and bytes_ok and elapsed < 60
    criterion(8, ok, f"Parseval rel {parseval:.1e}; R(0)=1,|R|<=1: {corr_ok}; cosine single mode: {cos_ok}; "
                     f"<u'v'>=<u'^2>: {shear_ok}; 40x50x30 round-trip byte-exact: {bytes_ok}; {elapsed:.2f}s")
    assert ok


# ------------------------------------------------------------------ 9

# hyperparameter table, one entry per case column
TABLE = {
    "macro_dimension": {"ks": [16], "bfs2d": [32, 32], "channel3d": [8, 32, 8]},
    "attention_cache_length": {"ks": 512, "bfs2d": 40, "channel3d": 20},
    "attention_layers": {"ks": 8, "bfs2d": 8, "channel3d": 2},
    "attention_heads": {"ks": 4, "bfs2d": 4, "channel3d": 1},
    "activation": {"ks": "relu", "bfs2d": "relu", "channel3d": "relu"},
    "layer_norm_constant": {"ks": 1e-5, "bfs2d": 1e-5, "channel3d": 1e-5},
    "conv_layers": {"ks": 4, "bfs2d": 4, "channel3d": 4},
    "conv_channels": {"ks": 32, "bfs2d": 32, "channel3d": 32},
    "noise_steps": {"ks": 20, "bfs2d": 20, "channel3d": 20},
    "noise_range": {"ks": (0.002, 80.0), "bfs2d": (0.002, 80.0), "channel3d": (0.002, 80.0)},
    "physics_prior": {"ks": "none", "bfs2d": "none", "channel3d": "reynolds_stress"},
}


def _emitted(snap: dict) -> dict:
    return {
        "macro_dimension": snap["restriction"]["macro_shape"],
        "attention_cache_length": snap["attention"]["window"],
        "attention_layers": snap["attention"]["layers"],
        "attention_heads": snap["attention"]["heads"],
        "activation": snap["attention"]["activation"],
        "layer_norm_constant": snap["attention"]["ln_eps"],
        "conv_layers": snap["diffusion"]["conv_layers"],
        "conv_channels": snap["diffusion"]["channels"],
        "noise_steps": snap["diffusion"]["noise_steps"],
        "noise_range": (snap["diffusion"]["sigma_min"], snap["diffusion"]["sigma_max"]),
        "physics_prior": snap["guidance"]["residual"],
    }


def test_criterion_9_presets(criterion):
    t0 = time.perf_counter()
    mismatches = []
    for case in ("ks", "bfs2d", "channel3d"):
        got = _emitted(preset(case).snapshot())
        for row, cols in TABLE.items():
            if got[row] != cols[case]:
                mismatches.append(f"{case}.{row}={got[row]!r} (table {cols[case]!r})")
        if preset(case).attention.d_z != int(np.prod(TABLE["macro_dimension"][case])):
            mismatches.append(f"{case}.d_z")
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 1.0
    criterion(9, ok, f"{len(TABLE)} rows x 3 cases, mismatches: {mismatches or 'none'}; {elapsed * 1000:.0f}ms")
    assert ok
