"""Checkpoint container: version-tagged list of named float32 blobs.

Layout (little-endian)::

    b"GLCK" | version u32 | count u32 |
    repeated: name_len u32 | name utf-8 | rank u32 | dims u32 * rank | float32 payload

Entries are sorted by name, so equal parameters always give equal bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..errors import ContractError, PersistenceError

MAGIC = b"GLCK"
VERSION = 1


def write_checkpoint(tensors: dict[str, torch.Tensor]) -> bytes:
    out = [struct.pack("<4sII", MAGIC, VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy().astype("<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack(f"<I{len(raw)}sI{arr.ndim}I", len(raw), raw, arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def read_checkpoint(buf: bytes, source: str = "<bytes>") -> dict[str, torch.Tensor]:
    try:
        magic, version, count = struct.unpack_from("<4sII", buf, 0)
        if magic != MAGIC:
            raise PersistenceError(f"{source}: not a checkpoint")
        if version != VERSION:
            raise PersistenceError(f"{source}: unsupported checkpoint version {version}")
        off = 12
        out: dict[str, torch.Tensor] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if off + size > len(buf):
                raise PersistenceError(f"{source}: truncated blob {name}")
            arr = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=off).reshape(dims)
            out[name] = torch.from_numpy(arr.astype(np.float32))
            off += size
    except struct.error as exc:
        raise PersistenceError(f"{source}: truncated checkpoint") from exc
    if off != len(buf):
        raise PersistenceError(f"{source}: {len(buf) - off} trailing bytes")
    return out


def save_checkpoint(module: nn.Module, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_checkpoint(dict(module.named_parameters())))
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    return path


def load_checkpoint(module: nn.Module, path: str | Path) -> nn.Module:
    """Copy blobs into ``module``; names and shapes must match exactly."""
    path = Path(path)
    try:
        blobs = read_checkpoint(path.read_bytes(), str(path))
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    params = dict(module.named_parameters())
    if set(params) != set(blobs):
        extra, missing = sorted(set(blobs) - set(params)), sorted(set(params) - set(blobs))
        raise ContractError(f"checkpoint {path} does not fit model (unexpected={extra[:3]}, missing={missing[:3]})")
    with torch.no_grad():
        for name, p in params.items():
            if tuple(p.shape) != tuple(blobs[name].shape):
                raise ContractError(f"checkpoint {path}: {name} has shape {tuple(blobs[name].shape)}, model expects {tuple(p.shape)}")
            p.copy_(blobs[name].to(p.dtype))
    return module
