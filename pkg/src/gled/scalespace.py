"""Parameter-free restriction (micro -> macro) and linear lifting (macro -> micro).

Grid convention per axis: a field with ``n`` points samples coordinates
``x_j = j / n`` of a unit cell. Under periodic extension both grids cover the
cell; under clamped extension the endpoints are pinned to ``0`` and ``1``
(``x_j = j / (n - 1)``), the usual layout of wall-bounded flow data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError
from .gledfile import DatasetManifest, Trajectory, read_trajectory, write_trajectory


class Mode(str, Enum):
    SUBSAMPLE = "subsample"
    LINEAR_INTERPOLATE = "linear_interpolate"
    BLOCK_AVERAGE = "block_average"


@dataclass(frozen=True)
class RestrictionSpec:
    micro_shape: tuple[int, ...]
    macro_shape: tuple[int, ...]
    mode: Mode = Mode.SUBSAMPLE
    # per-axis boundary handling: True = periodic, False = clamped
    periodic: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "micro_shape", tuple(int(n) for n in self.micro_shape))
        object.__setattr__(self, "macro_shape", tuple(int(n) for n in self.macro_shape))
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.periodic:
            object.__setattr__(self, "periodic", (True,) * len(self.micro_shape))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        self.validate()

    def validate(self) -> None:
        if len(self.micro_shape) != len(self.macro_shape) or len(self.periodic) != len(self.micro_shape):
            raise ConfigurationError("micro_shape, macro_shape and periodic must have equal rank")
        for mi, ma in zip(self.micro_shape, self.macro_shape):
            if ma < 1 or ma > mi:
                raise ConfigurationError(f"macro extent {ma} must lie in [1, {mi}]")
            if self.mode in (Mode.SUBSAMPLE, Mode.BLOCK_AVERAGE) and mi % ma:
                raise ConfigurationError(f"{self.mode.value} needs micro extent {mi} divisible by {ma}")

    @property
    def macro_size(self) -> int:
        return int(np.prod(self.macro_shape))

    def to_dict(self) -> dict:
        return {
            "micro_shape": list(self.micro_shape),
            "macro_shape": list(self.macro_shape),
            "mode": self.mode.value,
            "periodic": list(self.periodic),
        }


def _coords(n: int, periodic: bool) -> np.ndarray:
    if periodic or n == 1:
        return np.arange(n) / n
    return np.arange(n) / (n - 1)


def _interp_matrix(n_src: int, n_dst: int, periodic: bool) -> np.ndarray:
    """Row ``i`` holds the piecewise-linear weights of source nodes at destination point ``i``."""
    xd = _coords(n_dst, periodic)
    w = np.zeros((n_dst, n_src))
    if n_src == 1:
        w[:, 0] = 1.0
        return w
    if periodic:
        pos = xd * n_src
        lo = np.floor(pos + 1e-12).astype(int)
        frac = pos - lo
        frac[np.abs(frac) < 1e-12] = 0.0
        lo %= n_src
        hi = (lo + 1) % n_src
    else:
        pos = xd * (n_src - 1)
        lo = np.clip(np.floor(pos + 1e-12).astype(int), 0, n_src - 2)
        frac = pos - lo
        frac[np.abs(frac) < 1e-12] = 0.0
        hi = lo + 1
    rows = np.arange(n_dst)
    np.add.at(w, (rows, lo), 1.0 - frac)
    np.add.at(w, (rows, hi), frac)
    return w


def _apply_axis(a: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(mat, a, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _check_shape(a: np.ndarray, shape: tuple[int, ...], what: str) -> int:
    """Returns the number of leading batch axes."""
    rank = len(shape)
    if a.ndim < rank or tuple(a.shape[a.ndim - rank :]) != shape:
        raise ContractError(f"{what} shape {a.shape} does not end with {shape}")
    return a.ndim - rank


def restrict(s: np.ndarray, spec: RestrictionSpec) -> np.ndarray:
    """Map micro state(s) to macro state(s); leading batch/time axes are carried through."""
    s = np.asarray(s)
    lead = _check_shape(s, spec.micro_shape, "micro state")
    out = s
    for ax, (mi, ma, per) in enumerate(zip(spec.micro_shape, spec.macro_shape, spec.periodic)):
        axis = lead + ax
        if mi == ma:
            continue
        if spec.mode is Mode.SUBSAMPLE:
            out = np.take(out, np.arange(0, mi, mi // ma), axis=axis)
        elif spec.mode is Mode.BLOCK_AVERAGE:
            shape = out.shape[:axis] + (ma, mi // ma) + out.shape[axis + 1 :]
            out = out.reshape(shape).mean(axis=axis + 1)
        else:
            out = _apply_axis(out, _interp_matrix(mi, ma, per), axis)
    return out


def lift_linear(z: np.ndarray, spec: RestrictionSpec) -> np.ndarray:
    """Piecewise-linear upsampling of macro state(s) to the micro grid."""
    z = np.asarray(z)
    lead = _check_shape(z, spec.macro_shape, "macro state")
    out = z
    for ax, (mi, ma, per) in enumerate(zip(spec.micro_shape, spec.macro_shape, spec.periodic)):
        if mi != ma:
            out = _apply_axis(out, _interp_matrix(ma, mi, per), lead + ax)
    return out


def lift_matrix(spec: RestrictionSpec) -> np.ndarray:
    """Dense ``(prod(micro), prod(macro))`` matrix of :func:`lift_linear`."""
    eye = np.eye(spec.macro_size).reshape((spec.macro_size,) + spec.macro_shape)
    return lift_linear(eye, spec).reshape(spec.macro_size, -1).T


def encode_dataset(manifest: DatasetManifest, spec: RestrictionSpec, out_dir: str | Path) -> DatasetManifest:
    """Restrict every stored trajectory state by state and write a macro dataset with the same split layout."""
    out_dir = Path(out_dir)
    out = DatasetManifest(meta={**manifest.meta, "kind": "macro", "restriction": spec.to_dict()})
    for rel, split, seed in zip(manifest.files, manifest.splits, manifest.seeds):
        traj = read_trajectory(manifest.root / rel)
        z = restrict(traj.states, spec).astype(traj.states.dtype, copy=False)
        write_trajectory(out_dir / rel, Trajectory(np.ascontiguousarray(z), traj.step, traj.t0))
        out.add(rel, split, seed)
    out.save(out_dir / "manifest.json")
    return out
