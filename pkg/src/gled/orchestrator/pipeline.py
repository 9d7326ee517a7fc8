"""Pipeline stages: generate, encode, train-decoder, train-propagator, forecast, evaluate.

Each stage reads the artifacts of earlier stages from ``cfg.out_dir``, writes
its own, and records them in ``run_manifest.json`` next to them. The two
training stages only share the (parameter-free) restriction, so they can run
in either order.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .. import __version__
from .. import statistics as st
from ..diffusion import (
    DecoderTrainConfig,
    DenoiserConfig,
    DenoiserNet,
    ResidualSpec,
    build_schedule,
    guided_sample,
    pin_observable,
    reynolds_stress,
    reynolds_stress_target,
    sample,
    train_decoder,
)
from ..dynamics import AttentionConfig, AttentionPropagator, PropagatorTrainConfig, rollout, train_propagator
from ..errors import ConfigurationError, ContractError, IngestionError, PersistenceError
from ..gledfile import DatasetManifest, Trajectory, read_trajectory, write_trajectory
from ..kssolver import generate_dataset
from ..neuralcore import AdamConfig, load_checkpoint, make_rng, save_checkpoint
from ..scalespace import encode_dataset, restrict
from .config import RunConfig

log = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"


def configure_threads(deterministic: bool = False) -> int:
    """Single thread in deterministic mode, otherwise capped by ``GLED_THREADS`` if set."""
    if deterministic:
        n = 1
        torch.use_deterministic_algorithms(True)
    else:
        env = os.environ.get("GLED_THREADS")
        n = int(env) if env else torch.get_num_threads()
        if n < 1:
            raise ConfigurationError(f"GLED_THREADS must be >= 1, got {env}")
    torch.set_num_threads(n)
    return n


@dataclass
class RunManifest:
    config: dict[str, Any]
    checkpoints: dict[str, str] = field(default_factory=dict)
    datasets: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, Any] = field(default_factory=dict)
    stages: list[str] = field(default_factory=list)
    tool_version: str = __version__

    @classmethod
    def open(cls, cfg: RunConfig) -> "RunManifest":
        path = Path(cfg.out_dir) / MANIFEST_NAME
        if path.exists():
            doc = json.loads(path.read_text())
            doc["config"] = cfg.snapshot()
            return cls(**doc)
        return cls(config=cfg.snapshot())

    def record(self, cfg: RunConfig, stage: str) -> Path:
        if stage not in self.stages:
            self.stages.append(stage)
        path = Path(cfg.out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")
        return path


def _paths(cfg: RunConfig) -> dict[str, Path]:
    root = Path(cfg.out_dir)
    return {
        "micro": root / "data" / "micro" / "manifest.json",
        "macro": root / "data" / "macro" / "manifest.json",
        "decoder": root / "checkpoints" / "decoder.ckpt",
        "propagator": root / "checkpoints" / "propagator.ckpt",
        "forecast": root / "forecast",
        "metrics": root / "metrics",
    }


def _load_manifest(path: Path, stage: str) -> DatasetManifest:
    if not path.exists():
        raise PersistenceError(f"{path} not found; run the '{stage}' stage first")
    return DatasetManifest.load_file(path)


def _sidecar(ckpt: Path) -> Path:
    return ckpt.with_suffix(".json")


# ---------------------------------------------------------------- data stages


def generate(cfg: RunConfig) -> DatasetManifest:
    if cfg.case != "ks" or cfg.ks is None:
        raise ConfigurationError(f"case {cfg.case!r} has no built-in solver; use 'ingest' for external data")
    p = _paths(cfg)
    ks = cfg.ks
    man = generate_dataset(
        ks.solver(), ks.n_train, ks.n_valid, burn_in=ks.burn_in, seed=cfg.seeds.data,
        out_dir=p["micro"].parent, horizon=ks.horizon, n_test=ks.n_test,
    )
    run = RunManifest.open(cfg)
    run.datasets["micro"] = str(p["micro"])
    run.record(cfg, "generate")
    return man


def encode(cfg: RunConfig) -> DatasetManifest:
    p = _paths(cfg)
    micro = _load_manifest(p["micro"], "generate")
    man = encode_dataset(micro, cfg.restriction.spec(), p["macro"].parent)
    run = RunManifest.open(cfg)
    run.datasets["macro"] = str(p["macro"])
    run.record(cfg, "encode")
    return man


def ingest(files: list[str | Path], dims: list[int], step: float, out_dir: str | Path,
           dtype: str = "f8", split: str = "train", name: str = "ingested_00000.gled") -> DatasetManifest:
    """Stack raw little-endian snapshot files (one state each, ``prod(dims)`` scalars) into one trajectory."""
    out_dir = Path(out_dir)
    if dtype not in ("f4", "f8"):
        raise ConfigurationError(f"dtype must be f4 or f8, got {dtype!r}")
    if not dims or any(int(d) < 1 for d in dims):
        raise ConfigurationError(f"dims must be positive, got {dims}")
    np_dtype = np.dtype("<" + dtype)
    expected = int(np.prod(dims)) * np_dtype.itemsize
    man = DatasetManifest(meta={"kind": "ingested", "dims": list(map(int, dims)), "step": step, "dtype": dtype})
    states = []
    for f in files:
        f = Path(f)
        try:
            buf = f.read_bytes()
        except OSError as exc:
            raise IngestionError(f"{f}: cannot read ({exc})") from exc
        if len(buf) != expected:
            raise IngestionError(f"{f}: has {len(buf)} bytes, expected {expected}")
        states.append(np.frombuffer(buf, dtype=np_dtype).reshape(dims))
    if states:
        traj = Trajectory(np.stack(states).astype(np_dtype.newbyteorder("="), copy=False), step=step)
        write_trajectory(out_dir / name, traj)
        man.add(name, split, None)
    man.save(out_dir / "manifest.json")
    return man


# ------------------------------------------------------------ training stages


def _stack_states(trajs: list[Trajectory]) -> np.ndarray:
    return np.concatenate([t.states for t in trajs], axis=0)


def _denoiser_config(cfg: RunConfig, sigma_data: float) -> DenoiserConfig:
    d = cfg.diffusion
    sched = build_schedule(d.sigma_min, d.sigma_max, d.noise_steps)
    r = cfg.restriction
    return DenoiserConfig(
        micro_shape=tuple(r.micro_shape), macro_shape=tuple(r.macro_shape), restriction_mode=r.mode,
        periodic=tuple(r.periodic), channels=d.channels, conv_layers=d.conv_layers, kernel=d.kernel,
        embed_width=d.embed_width, sigma_data=sigma_data, noise_levels=tuple(sched.sigmas),
    )


def train_decoder_stage(cfg: RunConfig, callback=None) -> list[float]:
    p = _paths(cfg)
    micro = _load_manifest(p["micro"], "generate")
    data = _stack_states(micro.load("train")).astype(np.float32)
    dcfg = _denoiser_config(cfg, float(data.std()))
    net = DenoiserNet(dcfg, seed=cfg.seeds.decoder)
    d = cfg.diffusion
    sched = build_schedule(d.sigma_min, d.sigma_max, d.noise_steps)
    tcfg = DecoderTrainConfig(d.epochs, d.steps_per_epoch, d.batch_size, d.lr, d.clip_norm, cfg.seeds.decoder)
    hist = train_decoder(net, data, cfg.restriction.spec(), sched, tcfg, AdamConfig(lr=d.lr), callback)
    save_checkpoint(net, p["decoder"])
    _sidecar(p["decoder"]).write_text(json.dumps(dcfg.to_dict(), indent=2, sort_keys=True) + "\n")
    run = RunManifest.open(cfg)
    run.checkpoints["decoder"] = str(p["decoder"])
    run.metrics["decoder_loss"] = hist
    run.record(cfg, "train-decoder")
    return hist


def _macro_train(cfg: RunConfig) -> np.ndarray:
    p = _paths(cfg)
    macro = _load_manifest(p["macro"], "encode")
    trajs = macro.load("train")
    return np.stack([t.states.reshape(len(t), -1) for t in trajs]).astype(np.float32)


def train_propagator_stage(cfg: RunConfig, callback=None) -> list[float]:
    p = _paths(cfg)
    seqs = _macro_train(cfg)
    a = cfg.attention
    acfg = AttentionConfig(
        d_z=a.d_z, d_model=a.d_model, heads=a.heads, layers=a.layers, window=a.window, ffn_mult=a.ffn_mult,
        ln_eps=a.ln_eps, activation=a.activation, z_shift=float(seqs.mean()), z_scale=float(seqs.std()),
    )
    model = AttentionPropagator(acfg, seed=cfg.seeds.propagator)
    tcfg = PropagatorTrainConfig(
        epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, clip_norm=a.clip_norm, input_noise=a.input_noise,
        seed=cfg.seeds.propagator, max_batches_per_epoch=a.max_batches_per_epoch,
    )
    hist = train_propagator(model, seqs, tcfg, AdamConfig(lr=a.lr), callback)
    save_checkpoint(model, p["propagator"])
    _sidecar(p["propagator"]).write_text(json.dumps(acfg.to_dict(), indent=2, sort_keys=True) + "\n")
    run = RunManifest.open(cfg)
    run.checkpoints["propagator"] = str(p["propagator"])
    run.metrics["propagator_loss"] = hist
    run.record(cfg, "train-propagator")
    return hist


# ------------------------------------------------------------ model loading


def load_decoder(cfg: RunConfig) -> DenoiserNet:
    ckpt = _paths(cfg)["decoder"]
    if not ckpt.exists():
        raise PersistenceError(f"{ckpt} not found; run 'train-decoder' first")
    dcfg = DenoiserConfig.from_dict(json.loads(_sidecar(ckpt).read_text()))
    expect = _denoiser_config(cfg, dcfg.sigma_data)
    if dcfg != expect:
        raise ContractError(f"decoder checkpoint {ckpt} was trained with a different configuration")
    net = DenoiserNet(dcfg, seed=cfg.seeds.decoder)
    load_checkpoint(net, ckpt)
    return net.eval()


def load_propagator(cfg: RunConfig) -> AttentionPropagator:
    ckpt = _paths(cfg)["propagator"]
    if not ckpt.exists():
        raise PersistenceError(f"{ckpt} not found; run 'train-propagator' first")
    acfg = AttentionConfig(**json.loads(_sidecar(ckpt).read_text()))
    a = cfg.attention
    want = (a.d_z, a.d_model, a.heads, a.layers, a.window, a.ffn_mult, a.ln_eps)
    got = (acfg.d_z, acfg.d_model, acfg.heads, acfg.layers, acfg.window, acfg.ffn_mult, acfg.ln_eps)
    if want != got:
        raise ContractError(f"propagator checkpoint {ckpt} does not match the configured architecture")
    model = AttentionPropagator(acfg, seed=cfg.seeds.propagator)
    load_checkpoint(model, ckpt)
    return model.eval()


def build_residual(cfg: RunConfig, train_micro: np.ndarray | None = None) -> ResidualSpec | None:
    g = cfg.guidance
    kw = dict(beta_guide=g.beta_guide, sigma_guide=g.sigma_guide, sigma_r=g.sigma_r)
    if g.residual == "none":
        return None
    if g.residual == "zero_mean":
        n = int(np.prod(cfg.restriction.micro_shape))
        return pin_observable(np.full((1, n), 1.0 / n), [0.0], **kw)
    if train_micro is None:
        raise ContractError("the reynolds_stress residual needs training snapshots for its target profile")
    target = reynolds_stress(torch.from_numpy(np.asarray(train_micro, dtype=np.float32))).mean(dim=0)
    return reynolds_stress_target(target, **kw)


def decode_states(net: DenoiserNet, z: np.ndarray, cfg: RunConfig, rng: np.random.Generator,
                  rs: ResidualSpec | None = None) -> np.ndarray:
    """Decode macro states ``(M, *macro)`` in batches of ``cfg.forecast.decode_batch``."""
    d = cfg.diffusion
    sched = build_schedule(d.sigma_min, d.sigma_max, d.noise_steps)
    out = []
    for lo in range(0, len(z), cfg.forecast.decode_batch):
        zb = torch.from_numpy(np.ascontiguousarray(z[lo : lo + cfg.forecast.decode_batch], dtype=np.float32))
        s = sample(net, zb, sched, rng) if rs is None else guided_sample(net, zb, sched, rs, rng)
        out.append(s.detach().numpy())
    return np.concatenate(out, axis=0) if out else np.zeros((0, *cfg.restriction.micro_shape), np.float32)


# ------------------------------------------------------------ forecast / evaluate


def forecast(cfg: RunConfig, steps: int | None = None) -> list[Path]:
    """Warm up on test trajectories, roll out, decode every predicted macro state, write micro forecasts."""
    p = _paths(cfg)
    micro = _load_manifest(p["micro"], "generate")
    split = "test" if micro.paths("test") else "valid"
    trajs = micro.load(split)[: cfg.forecast.n_rollouts]
    if not trajs:
        raise ContractError(f"no {split} trajectories to forecast from")
    n_warm = cfg.warmup_steps
    n_pred = cfg.prediction_steps if steps is None else int(steps)
    spec = cfg.restriction.spec()
    warm = np.stack([restrict(t.states[:n_warm], spec).reshape(n_warm, -1) for t in trajs]).astype(np.float32)
    model = load_propagator(cfg)
    net = load_decoder(cfg)
    rs = build_residual(cfg, _stack_states(micro.load("train")) if cfg.guidance.residual == "reynolds_stress" else None)

    t0 = time.perf_counter()
    ro = rollout(model, torch.from_numpy(warm), n_pred)
    if not ro.complete:
        log.warning("forecast rollout stopped early: %s", ro.message)
    zp = ro.states.numpy()
    log.info("forecast rollout steps=%d seconds=%.1f", zp.shape[1], time.perf_counter() - t0)

    out_dir = p["forecast"]
    written = []
    step = cfg.macro_step
    for i, traj in enumerate(trajs):
        rng = make_rng(cfg.seeds.sampling, i)
        z_i = zp[i].reshape((zp.shape[1], *spec.macro_shape))
        s_i = decode_states(net, z_i, cfg, rng, rs)
        t_start = traj.t0 + n_warm * traj.step
        written.append(write_trajectory(out_dir / f"pred_{i:05d}.gled", Trajectory(s_i, step, t_start)))
        write_trajectory(out_dir / f"macro_{i:05d}.gled", Trajectory(np.ascontiguousarray(z_i), step, t_start))
    log.info("forecast decoded=%d seconds=%.1f", len(trajs), time.perf_counter() - t0)
    fm = {"split": split, "source": [str(x) for x in micro.paths(split)[: len(trajs)]],
          "warmup_steps": n_warm, "prediction_steps": int(zp.shape[1]), "complete": ro.complete}
    (out_dir / "forecast.json").write_text(json.dumps(fm, indent=2) + "\n")
    run = RunManifest.open(cfg)
    run.datasets["forecast"] = str(out_dir / "forecast.json")
    run.record(cfg, "forecast")
    return written


def evaluate_arrays(pred: np.ndarray, truth: np.ndarray, cfg: RunConfig) -> tuple[dict[str, Any], dict[str, dict]]:
    """Metrics of forecasts ``pred`` against ``truth``, both ``(B, T, *micro)``; returns (summary, csv tables)."""
    if pred.shape != truth.shape:
        raise ContractError(f"forecast shape {pred.shape} differs from truth shape {truth.shape}")
    e = st.mean_error_curve(pred, truth)
    times = cfg.macro_step * np.arange(1, len(e) + 1)
    summary: dict[str, Any] = {
        "n_rollouts": int(pred.shape[0]),
        "steps": int(pred.shape[1]),
        "max_abs_pred": float(np.abs(pred).max()),
        "max_abs_truth": float(np.abs(truth).max()),
        "mean_pred": float(pred.mean()),
        "mean_truth": float(truth.mean()),
        "var_pred": float(pred.var()),
        "var_truth": float(truth.var()),
    }
    early = times <= 2.0 + 1e-9
    summary["mean_error_t_le_2"] = float(np.nanmean(e[early])) if early.any() else float("nan")
    tables = {"error_curve": {"time": times, "relative_error": e}}
    if cfg.case == "ks" and cfg.ks is not None:
        length = cfg.ks.domain_length
        ranges = st.default_ranges(truth, length)
        hp = st.ux_uxx_density(pred, length, 50, ranges)
        ht = st.ux_uxx_density(truth, length, 50, ranges)
        summary["ux_uxx_tv_distance"] = st.histogram_distance(hp, ht)
        k, ep = st.energy_spectrum(pred.reshape(-1, pred.shape[-1]))
        _, et = st.energy_spectrum(truth.reshape(-1, truth.shape[-1]))
        tables["energy_spectrum"] = {"k": k, "pred": ep, "truth": et}
        tables["spatial_correlation"] = {
            "lag": np.arange(pred.shape[-1]) * length / pred.shape[-1],
            "pred": st.spatial_correlation(pred.reshape(-1, pred.shape[-1])),
            "truth": st.spatial_correlation(truth.reshape(-1, truth.shape[-1])),
        }
    return summary, tables


def evaluate(cfg: RunConfig) -> dict[str, Any]:
    p = _paths(cfg)
    fpath = p["forecast"] / "forecast.json"
    if not fpath.exists():
        raise PersistenceError(f"{fpath} not found; run 'forecast' first")
    fm = json.loads(fpath.read_text())
    n_warm, n_pred = fm["warmup_steps"], fm["prediction_steps"]
    preds, truths = [], []
    for i, src in enumerate(fm["source"]):
        pred = read_trajectory(p["forecast"] / f"pred_{i:05d}.gled").states
        truth = read_trajectory(src).states[n_warm : n_warm + n_pred]
        if len(truth) < len(pred):
            raise ContractError(f"{src} is too short to score {len(pred)} predicted states")
        preds.append(pred.astype(np.float64))
        truths.append(truth.astype(np.float64))
    summary, tables = evaluate_arrays(np.stack(preds), np.stack(truths), cfg)
    for name, cols in tables.items():
        st.write_csv(p["metrics"] / f"{name}.csv", cols)
    (p["metrics"] / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for key, val in summary.items():
        log.info("metric %s=%s", key, val)
    run = RunManifest.open(cfg)
    run.metrics["evaluation"] = summary
    run.record(cfg, "evaluate")
    return summary


def forecast_pipeline(cfg: RunConfig, callback=None) -> dict[str, Any]:
    """All stages in order for a case with a built-in solver."""
    generate(cfg)
    encode(cfg)
    train_decoder_stage(cfg)
    train_propagator_stage(cfg, callback)
    forecast(cfg)
    return evaluate(cfg)
