"""Kuramoto-Sivashinsky ground truth: Fourier pseudo-spectral ETDRK4 integrator.

Solves ``u_t = -u_xx - nu * u_xxxx - u * u_x`` on a periodic domain ``[0, L)``.
The linear part is integrated exactly by the exponential factors; the
nonlinearity is evaluated pseudo-spectrally as ``-0.5 * d/dx (u^2)`` with
2/3-rule dealiasing. Everything here runs in double precision.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericalBlowupError
from .gledfile import DatasetManifest, Trajectory, write_trajectory

log = logging.getLogger(__name__)

IC_MODES = 8


@dataclass(frozen=True)
class KsConfig:
    domain_length: float = 22.0
    grid_points: int = 64
    viscosity: float = 1.0
    micro_step: float = 0.025
    macro_step: float = 0.25

    def validate(self) -> "KsConfig":
        if not self.domain_length > 0:
            raise ConfigurationError(f"domain_length must be > 0, got {self.domain_length}")
        if self.grid_points < 8 or self.grid_points % 2:
            raise ConfigurationError(f"grid_points must be even and >= 8, got {self.grid_points}")
        if not self.viscosity > 0:
            raise ConfigurationError(f"viscosity must be > 0, got {self.viscosity}")
        if not self.micro_step > 0:
            raise ConfigurationError(f"micro_step must be > 0, got {self.micro_step}")
        ratio = self.macro_step / self.micro_step
        if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigurationError(
                f"macro_step {self.macro_step} is not an integer multiple of micro_step {self.micro_step}"
            )
        return self

    @property
    def stride(self) -> int:
        """Micro steps per stored macro step."""
        return int(round(self.macro_step / self.micro_step))

    @property
    def grid(self) -> np.ndarray:
        return self.domain_length * np.arange(self.grid_points) / self.grid_points

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class EtdrkTables:
    """Precomputed ETDRK4 coefficients, one entry per Fourier mode (numpy FFT ordering).

    ``f2`` already contains the factor 2 of the middle stages, so the update is
    ``E v + f1 N_v + f2 (N_a + N_b) + f3 N_c`` and at ``Lk = 0`` the weights reduce
    to ``dt * (1/6, 1/3, 1/6)``.
    """

    k: np.ndarray
    lk: np.ndarray
    E: np.ndarray
    E2: np.ndarray
    Q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    deriv: np.ndarray  # -0.5i*k with the Nyquist mode zeroed
    dealias: np.ndarray
    dt: float


def wavenumbers(cfg: KsConfig) -> np.ndarray:
    n = cfg.grid_points
    return 2.0 * np.pi / cfg.domain_length * np.fft.fftfreq(n, d=1.0 / n)


def precompute_tables(cfg: KsConfig, contour_points: int = 32, dt: float | None = None) -> EtdrkTables:
    """Build the Kassam-Trefethen coefficient tables for step size ``dt`` (default ``cfg.micro_step``).

    The phi-function expressions are averaged over ``contour_points`` points on a
    unit circle around each ``Lk * dt`` which sidesteps the cancellation at zero.
    """
    cfg.validate()
    if contour_points < 16:
        raise ConfigurationError(f"contour_points must be >= 16, got {contour_points}")
    h = cfg.micro_step if dt is None else float(dt)
    if not h > 0:
        raise ConfigurationError(f"step must be > 0, got {h}")

    n = cfg.grid_points
    k = wavenumbers(cfg)
    lk = k**2 - cfg.viscosity * k**4

    r = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    lr = h * lk[:, None] + r[None, :]
    elr = np.exp(lr)
    q = h * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
    f1 = h * np.real(np.mean((-4.0 - lr + elr * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=1))
    f2 = 2.0 * h * np.real(np.mean((2.0 + lr + elr * (-2.0 + lr)) / lr**3, axis=1))
    f3 = h * np.real(np.mean((-4.0 - 3.0 * lr - lr**2 + elr * (4.0 - lr)) / lr**3, axis=1))

    kd = k.copy()
    kd[n // 2] = 0.0
    m = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    return EtdrkTables(
        k=k,
        lk=lk,
        E=np.exp(h * lk).astype(np.complex128),
        E2=np.exp(h * lk / 2.0).astype(np.complex128),
        Q=q.astype(np.complex128),
        f1=f1.astype(np.complex128),
        f2=f2.astype(np.complex128),
        f3=f3.astype(np.complex128),
        deriv=-0.5j * kd,
        dealias=(m <= n / 3.0).astype(np.float64),
        dt=h,
    )


def _nonlinear(v: np.ndarray, t: EtdrkTables) -> np.ndarray:
    u = np.fft.ifft(v).real
    return t.deriv * t.dealias * np.fft.fft(u * u)


def step_spectral(v: np.ndarray, t: EtdrkTables, nonlinear: bool = True) -> np.ndarray:
    """One ETDRK4 step on Fourier coefficients ``v`` (last axis = modes)."""
    if not nonlinear:
        return t.E * v
    nv = _nonlinear(v, t)
    a = t.E2 * v + t.Q * nv
    na = _nonlinear(a, t)
    b = t.E2 * v + t.Q * na
    nb = _nonlinear(b, t)
    c = t.E2 * a + t.Q * (2.0 * nb - nv)
    nc = _nonlinear(c, t)
    return t.E * v + t.f1 * nv + t.f2 * (na + nb) + t.f3 * nc


def _to_physical(v: np.ndarray) -> np.ndarray:
    return np.fft.ifft(v).real


def step(u: np.ndarray, tables: EtdrkTables, nonlinear: bool = True) -> np.ndarray:
    """Advance a real field (or a batch along leading axes) by one micro step."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != tables.k.shape[0]:
        raise ConfigurationError(f"state length {u.shape[-1]} does not match grid {tables.k.shape[0]}")
    if not np.all(np.isfinite(u)):
        raise NumericalBlowupError("non-finite values in KS state")
    out = _to_physical(step_spectral(np.fft.fft(u), tables, nonlinear))
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError("KS step produced non-finite values")
    return out


def n_stored(cfg: KsConfig, horizon: float) -> int:
    return int(np.floor(horizon / cfg.macro_step + 1e-9)) + 1


def simulate_batch(
    u0: np.ndarray,
    cfg: KsConfig,
    horizon: float,
    tables: EtdrkTables | None = None,
    burn_in: float = 0.0,
) -> np.ndarray:
    """Integrate a batch ``(B, d_s)`` of initial states; returns ``(B, n_stored, d_s)``.

    ``burn_in`` time units are integrated before the first stored state.
    """
    cfg.validate()
    if not horizon > 0:
        raise ConfigurationError(f"horizon must be > 0, got {horizon}")
    if burn_in < 0:
        raise ConfigurationError(f"burn_in must be >= 0, got {burn_in}")
    tables = tables or precompute_tables(cfg)
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.ndim != 2 or u0.shape[1] != cfg.grid_points:
        raise ConfigurationError(f"expected initial states of shape (B, {cfg.grid_points}), got {u0.shape}")
    if not np.all(np.isfinite(u0)):
        raise NumericalBlowupError("non-finite values in initial state")

    v = np.fft.fft(u0)
    for _ in range(int(round(burn_in / cfg.micro_step))):
        v = step_spectral(v, tables)

    n_out = n_stored(cfg, horizon)
    out = np.empty((u0.shape[0], n_out, cfg.grid_points))
    out[:, 0] = u0 if burn_in == 0 else _to_physical(v)
    for n in range(1, n_out):
        for _ in range(cfg.stride):
            v = step_spectral(v, tables)
        out[:, n] = _to_physical(v)
        if not np.all(np.isfinite(out[:, n])):
            raise NumericalBlowupError(f"KS integration blew up before t={n * cfg.macro_step:g}")
    return out


def simulate(u0: np.ndarray, cfg: KsConfig, horizon: float, tables: EtdrkTables | None = None) -> Trajectory:
    """Stored trajectory of ``floor(T / dt_macro) + 1`` states, ``u0`` included."""
    u0 = np.asarray(u0, dtype=np.float64)
    states = simulate_batch(u0[None, :], cfg, horizon, tables)[0]
    return Trajectory(states, step=cfg.macro_step, t0=0.0)


def random_initial_state(cfg: KsConfig, rng: np.random.Generator) -> np.ndarray:
    """Sum of Fourier modes 1..8 with standard normal coefficients, scaled to unit RMS."""
    x = cfg.grid
    m = np.arange(1, IC_MODES + 1)
    phase = 2.0 * np.pi * np.outer(m, x) / cfg.domain_length
    a, b = rng.standard_normal(IC_MODES), rng.standard_normal(IC_MODES)
    u = a @ np.cos(phase) + b @ np.sin(phase)
    return u / np.sqrt(np.mean(u**2))


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed ^ index))


def generate_dataset(
    cfg: KsConfig,
    n_train: int,
    n_valid: int,
    burn_in: float = 50.0,
    seed: int = 0,
    out_dir: str | Path = "data/micro",
    horizon: float = 96.0,
    n_test: int = 0,
) -> DatasetManifest:
    """Simulate and write ``n_train + n_valid + n_test`` trajectories plus ``manifest.json``.

    Trajectory ``index`` (counted across splits in that order) draws its initial
    state from the stream keyed by ``seed ^ index``.
    """
    cfg.validate()
    if n_train < 1 or n_valid < 1 or n_test < 0:
        raise ConfigurationError("need n_train >= 1, n_valid >= 1 and n_test >= 0")
    if burn_in < 0:
        raise ConfigurationError(f"burn_in must be >= 0, got {burn_in}")
    out_dir = Path(out_dir)
    tables = precompute_tables(cfg)
    splits = ["train"] * n_train + ["valid"] * n_valid + ["test"] * n_test
    seeds = [seed ^ i for i in range(len(splits))]
    u0 = np.stack([random_initial_state(cfg, trajectory_rng(seed, i)) for i in range(len(splits))])

    manifest = DatasetManifest(
        meta={
            "kind": "micro",
            "ks_config": cfg.to_dict(),
            "burn_in": burn_in,
            "horizon": horizon,
            "seed": seed,
            "ic_modes": IC_MODES,
        }
    )
    chunk = 256
    for lo in range(0, len(splits), chunk):
        states = simulate_batch(u0[lo : lo + chunk], cfg, horizon, tables, burn_in=burn_in)
        for j, traj in enumerate(states):
            i = lo + j
            rel = f"{splits[i]}_{i:05d}.gled"
            write_trajectory(out_dir / rel, Trajectory(traj, step=cfg.macro_step))
            manifest.add(rel, splits[i], seeds[i])
        log.info("generate progress=%d/%d", min(lo + chunk, len(splits)), len(splits))
    manifest.save(out_dir / "manifest.json")
    return manifest
