"""Binary trajectory container ("GLED" files) and JSON dataset manifests.

Layout, all little-endian::

    b"GLED" | version u32 | rank u32 | dims u32 * rank | width u32 | step f64 | t0 f64 | payload

Dimensions are time-major and the payload is row-major scalars of ``width``
bytes (4 -> float32, 8 -> float64).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import PersistenceError

MAGIC = b"GLED"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


@dataclass
class Trajectory:
    """Time-ordered states sharing one grid shape; ``states[n]`` lives at ``t0 + n * step``."""

    states: np.ndarray
    step: float
    t0: float = 0.0

    def __post_init__(self):
        self.states = np.asarray(self.states)
        if self.states.ndim < 1:
            raise PersistenceError("trajectory needs a leading time axis")
        if not self.step > 0:
            raise PersistenceError(f"trajectory step must be positive, got {self.step}")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(len(self))


def encode(traj: Trajectory) -> bytes:
    arr = traj.states
    width = arr.dtype.itemsize
    if width not in _DTYPES or arr.dtype.kind != "f":
        raise PersistenceError(f"unsupported scalar type {arr.dtype}")
    header = struct.pack(f"<4sII{arr.ndim}I", MAGIC, FORMAT_VERSION, arr.ndim, *arr.shape)
    header += struct.pack("<Idd", width, float(traj.step), float(traj.t0))
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[width]).tobytes()


def decode(buf: bytes, source: str = "<bytes>") -> Trajectory:
    try:
        magic, version, rank = struct.unpack_from("<4sII", buf, 0)
        if magic != MAGIC:
            raise PersistenceError(f"{source}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise PersistenceError(f"{source}: unsupported format version {version}")
        off = 12
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        width, step, t0 = struct.unpack_from("<Idd", buf, off)
        off += 20
    except struct.error as exc:
        raise PersistenceError(f"{source}: truncated header") from exc
    if width not in _DTYPES:
        raise PersistenceError(f"{source}: unsupported scalar width {width}")
    expected = int(np.prod(dims, dtype=np.int64)) * width
    if len(buf) - off != expected:
        raise PersistenceError(f"{source}: payload has {len(buf) - off} bytes, expected {expected}")
    states = np.frombuffer(buf, dtype=_DTYPES[width], offset=off).reshape(dims)
    native = np.float32 if width == 4 else np.float64
    return Trajectory(states.astype(native, copy=True), step, t0)


def write_trajectory(path: str | Path, traj: Trajectory) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode(traj))
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    return path


def read_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    return decode(buf, str(path))


@dataclass
class DatasetManifest:
    """Index of GLED files. ``files`` are stored relative to the manifest directory."""

    files: list[str] = field(default_factory=list)
    splits: list[str] = field(default_factory=list)
    seeds: list[int | None] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.files)

    def paths(self, split: str | None = None) -> list[Path]:
        return [self.root / f for f, s in zip(self.files, self.splits) if split is None or s == split]

    def load(self, split: str | None = None) -> list[Trajectory]:
        return [read_trajectory(p) for p in self.paths(split)]

    def add(self, relpath: str, split: str, seed: int | None = None) -> None:
        self.files.append(relpath)
        self.splits.append(split)
        self.seeds.append(seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "manifest_version": MANIFEST_VERSION,
            "files": [
                {"path": f, "split": s, "seed": seed}
                for f, s, seed in zip(self.files, self.splits, self.seeds)
            ],
            "meta": self.meta,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise PersistenceError(f"cannot write manifest {path}: {exc}") from exc
        self.root = path.parent
        return path

    @classmethod
    def load_file(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise PersistenceError(f"cannot read manifest {path}: {exc}") from exc
        if doc.get("manifest_version") != MANIFEST_VERSION:
            raise PersistenceError(f"{path}: unsupported manifest version {doc.get('manifest_version')}")
        out = cls(meta=doc.get("meta", {}), root=path.parent)
        for entry in doc.get("files", []):
            out.add(entry["path"], entry.get("split", "train"), entry.get("seed"))
        return out
