"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"PACF" | u32 version | 32-byte sha256 config digest
    | u32 len + UTF-8 JSON config
    | u32 blob count
    | per blob: u16 len + UTF-8 name, u8 ndim, u32 * ndim dims, float64 LE payload
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import OptimState

__all__ = [
    "MAGIC",
    "VERSION",
    "CheckpointError",
    "MagicError",
    "VersionError",
    "DigestError",
    "ShapeMismatchError",
    "Checkpoint",
    "config_digest",
    "checkpoint_save",
    "checkpoint_load",
    "restore",
    "atomic_write_bytes",
]

MAGIC = b"PACF"
VERSION = 1


class CheckpointError(ValueError):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class DigestError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def _canonical(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_digest(config: dict) -> bytes:
    return hashlib.sha256(_canonical(config)).digest()


@dataclass
class Checkpoint:
    config: dict
    digest: bytes
    blobs: dict[str, np.ndarray] = field(default_factory=dict)


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _collect(layer, backbone, optimizers: dict[str, OptimState] | None) -> dict[str, np.ndarray]:
    blobs: dict[str, np.ndarray] = {}
    for model in (layer, backbone):
        if model is None:
            continue
        for name, t in model.named_parameters():
            blobs[name] = t.data
        for name, buf in model.buffers():
            blobs[name] = buf
    for group, st in (optimizers or {}).items():
        blobs[f"opt.{group}.hyper"] = np.array([st.lr, st.beta1, st.beta2, st.eps, float(st.step)])
        for i, (m, v) in enumerate(zip(st.m, st.v)):
            blobs[f"opt.{group}.m.{i}"] = m
            blobs[f"opt.{group}.v.{i}"] = v
    return blobs


def checkpoint_save(path, layer=None, backbone=None, optimizers: dict[str, OptimState] | None = None, config: dict | None = None) -> bytes:
    """Write models (and optional optimiser states) to ``path``; returns the digest."""
    if config is None:
        config = {}
        if layer is not None:
            config["pacfno"] = layer.config
        if backbone is not None:
            config["backbone"] = backbone.config
    digest = config_digest(config)
    cfg = _canonical(config)
    parts = [MAGIC, struct.pack("<I", VERSION), digest, struct.pack("<I", len(cfg)), cfg]
    blobs = _collect(layer, backbone, optimizers)
    parts.append(struct.pack("<I", len(blobs)))
    for name, arr in blobs.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    atomic_write_bytes(path, b"".join(parts))
    return digest


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint is truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_load(path, expected_digest: bytes | None = None) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise MagicError(f"{path}: not a PACF checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, this build reads {VERSION}")
    digest = r.take(32)
    if expected_digest is not None and digest != expected_digest:
        raise DigestError(f"{path}: config digest does not match the requested configuration")
    (cfg_len,) = r.unpack("<I")
    config = json.loads(r.take(cfg_len).decode("utf-8"))
    if config_digest(config) != digest:
        raise DigestError(f"{path}: stored config does not hash to the stored digest")
    (count,) = r.unpack("<I")
    blobs = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims)) if ndim else 1
        blobs[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
    return Checkpoint(config, digest, blobs)


def restore(ckpt: Checkpoint, layer=None, backbone=None, optimizers: dict[str, OptimState] | None = None) -> None:
    """Copy checkpoint blobs into live models, checking every shape."""

    def fetch(name, shape):
        if name not in ckpt.blobs:
            raise ShapeMismatchError(f"checkpoint has no tensor {name!r}")
        arr = ckpt.blobs[name]
        if arr.shape != tuple(shape):
            raise ShapeMismatchError(f"{name}: checkpoint shape {arr.shape}, model expects {tuple(shape)}")
        return arr.copy()

    for model in (layer, backbone):
        if model is None:
            continue
        for name, t in model.named_parameters():
            t.data = fetch(name, t.shape)
        for name, buf in model.buffers():
            buf[...] = fetch(name, buf.shape)
    for group, st in (optimizers or {}).items():
        lr, b1, b2, eps, step = ckpt.blobs[f"opt.{group}.hyper"]
        st.lr, st.beta1, st.beta2, st.eps, st.step = lr, b1, b2, eps, int(step)
        i = 0
        st.m, st.v = [], []
        while f"opt.{group}.m.{i}" in ckpt.blobs:
            st.m.append(ckpt.blobs[f"opt.{group}.m.{i}"].copy())
            st.v.append(ckpt.blobs[f"opt.{group}.v.{i}"].copy())
            i += 1
