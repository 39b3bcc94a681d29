"""Binary checkpoint persistence.

Layout (all little-endian): magic "AQCK", u32 version, u32 k/d/L/M/N/E,
f64 beta/gamma, u64 seed, u32 iterations, u8 positional-table flag,
L*(u32 c, u32 w, u32 h) level geometry, u32 blob count, then named blobs
(u16 name length, utf-8 name, u32 rows, u32 cols, rows*cols float32).

Blobs are stored in the model's declared parameter order and restored as
widened float64, so a model whose parameters sit on the float32 grid
round-trips bit-identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError
from .extractor import LevelSpec
from .model import HashModel, ModelConfig

_MAGIC = b"AQCK"
_VERSION = 1


@dataclass
class CheckpointMeta:
    beta: float
    gamma: float
    seed: int
    iterations: int


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise CheckpointError(f"checkpoint {self.path}: truncated at byte {self.pos}")
        out = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return out

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"checkpoint {self.path}: truncated at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out


def save_checkpoint(path: Path, model: HashModel, meta: CheckpointMeta) -> None:
    cfg = model.config
    params = model.named_parameters()
    parts = [
        _MAGIC,
        struct.pack("<IIIIIII", _VERSION, cfg.k, cfg.d, len(cfg.levels),
                    cfg.heads, cfg.branches, cfg.n_tokens),
        struct.pack("<ddQI", meta.beta, meta.gamma, meta.seed, meta.iterations),
        struct.pack("<B", 1),  # fixed sinusoidal positional table in use
    ]
    for spec in cfg.levels:
        parts.append(struct.pack("<III", spec.channels, spec.width, spec.height))
    parts.append(struct.pack("<I", len(params)))
    for name, tensor in params:
        encoded = name.encode("utf-8")
        rows, cols = tensor.shape
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<II", rows, cols))
        parts.append(tensor.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: Path) -> tuple[HashModel, CheckpointMeta]:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    r = _Reader(raw, path)
    if r.take_bytes(4) != _MAGIC:
        raise CheckpointError(f"checkpoint {path}: bad magic")
    version, k, d, n_levels, heads, branches, n_tokens = r.take("<IIIIIII")
    if version != _VERSION:
        raise CheckpointError(f"checkpoint {path}: unsupported version {version}")
    beta, gamma, seed, iterations = r.take("<ddQI")
    (pos_flag,) = r.take("<B")
    if pos_flag != 1:
        raise CheckpointError(f"checkpoint {path}: unknown positional table flag {pos_flag}")
    levels = tuple(LevelSpec(*r.take("<III")) for _ in range(n_levels))
    try:
        config = ModelConfig(levels=levels, d=d, k=k, heads=heads, branches=branches)
    except Exception as e:
        raise CheckpointError(f"checkpoint {path}: inconsistent header: {e}")
    if config.n_tokens != n_tokens:
        raise CheckpointError(
            f"checkpoint {path}: token count {n_tokens} != geometry total {config.n_tokens}")
    (blob_count,) = r.take("<I")
    blobs: list[tuple[str, np.ndarray]] = []
    for _ in range(blob_count):
        (name_len,) = r.take("<H")
        name = r.take_bytes(name_len).decode("utf-8")
        rows, cols = r.take("<II")
        data = np.frombuffer(r.take_bytes(rows * cols * 4), dtype="<f4")
        blobs.append((name, data.reshape(rows, cols).astype(np.float64)))
    if r.pos != len(raw):
        raise CheckpointError(f"checkpoint {path}: {len(raw) - r.pos} trailing bytes")

    model = HashModel.init(config, seed=0)
    expected = model.named_parameters()
    if len(blobs) != len(expected):
        raise CheckpointError(
            f"checkpoint {path}: {len(blobs)} blobs, expected {len(expected)}")
    for (name, data), (want_name, tensor) in zip(blobs, expected):
        if name != want_name:
            raise CheckpointError(
                f"checkpoint {path}: blob '{name}' where '{want_name}' expected")
        if data.shape != tensor.shape:
            raise CheckpointError(
                f"checkpoint {path}: blob '{name}' shape {data.shape} != {tensor.shape}")
        model.replace_parameter(name, Tensor(data, requires_grad=True))
    return model, CheckpointMeta(beta=beta, gamma=gamma, seed=int(seed),
                                 iterations=int(iterations))
