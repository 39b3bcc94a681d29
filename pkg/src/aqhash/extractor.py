"""Multi-scale feature extractor.

Ingested backbone pyramids are fused top-down (coarse level upsampled and
added into the next finer level through 1x1 channel adapters), reduced to
a common embedding width, flattened to a token matrix, and refined by a
single multi-head self-attention + feed-forward layer with residual
connections and no layer normalization.

Feature maps are stored as (channels, width, height) arrays; inside the
differentiable pipeline each level becomes a (width*height, channels)
matrix whose row order is the flat spatial index ``x * height + y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LevelSpec:
    """Geometry of one pyramid level: channel count and spatial size."""

    channels: int
    width: int
    height: int

    @property
    def sites(self) -> int:
        return self.width * self.height

    def validate(self) -> None:
        if self.channels < 1 or self.width < 1 or self.height < 1:
            raise ConfigError(f"level dimensions must be positive, got {self}")


@dataclass
class FeaturePyramid:
    """Per-image stack of backbone stage outputs, coarsest level first."""

    levels: list[np.ndarray]
    image_id: int = -1

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ShapeError("pyramid", reason="at least one level required")
        for j, lvl in enumerate(self.levels):
            if np.asarray(lvl).ndim != 3:
                raise ShapeError("pyramid", np.asarray(lvl).shape,
                                 reason=f"level {j + 1} must be (channels, width, height), got")

    @property
    def specs(self) -> tuple[LevelSpec, ...]:
        return tuple(LevelSpec(*lvl.shape) for lvl in self.levels)


def level_matrix(level: np.ndarray) -> np.ndarray:
    """(c, w, h) map -> (w*h, c) matrix, rows in flat spatial order."""
    c = level.shape[0]
    return np.ascontiguousarray(level.reshape(c, -1).T)


def matrix_to_level(mat: np.ndarray, spec: LevelSpec) -> np.ndarray:
    """(w*h, c) matrix -> (c, w, h) map."""
    return np.ascontiguousarray(mat.T).reshape(spec.channels, spec.width, spec.height)


def upsample_indices(width: int, height: int) -> np.ndarray:
    """Row-gather indices realizing nearest-neighbor 2x spatial upsampling."""
    src_x = np.arange(2 * width) // 2
    src_y = np.arange(2 * height) // 2
    return np.add.outer(src_x * height, src_y).ravel()


def token_coordinates(specs: tuple[LevelSpec, ...]) -> list[tuple[int, int, int]]:
    """(level, x, y) for each flat token index, levels numbered from 1."""
    coords = []
    for j, spec in enumerate(specs, start=1):
        for x in range(spec.width):
            for y in range(spec.height):
                coords.append((j, x, y))
    return coords


@dataclass
class ExtractorParams:
    """Learnable parameters of the extractor.

    ``lateral[i]``/``topdown[i]`` adapt level i+2 of the fusion: lateral
    mixes that level's own channels, topdown maps the upsampled coarser
    level's channels onto it.  ``reduce[j]`` maps level j+1 to width d.
    """

    lateral: list[Tensor]
    topdown: list[Tensor]
    reduce: list[Tensor]
    attn_wq: Tensor
    attn_wk: Tensor
    attn_wv: Tensor
    attn_wo: Tensor
    ffn_w1: Tensor
    ffn_w2: Tensor
    heads: int


def init_extractor_params(specs: tuple[LevelSpec, ...], d: int, heads: int,
                          rng: np.random.Generator) -> ExtractorParams:
    if d % heads != 0:
        raise ConfigError(f"embedding width {d} not divisible by {heads} heads")
    lateral, topdown = [], []
    for prev, cur in zip(specs[:-1], specs[1:]):
        lateral.append(Tensor(ad.uniform_init(rng, cur.channels, cur.channels), requires_grad=True))
        topdown.append(Tensor(ad.uniform_init(rng, prev.channels, cur.channels), requires_grad=True))
    reduce = [Tensor(ad.uniform_init(rng, s.channels, d), requires_grad=True) for s in specs]
    return ExtractorParams(
        lateral=lateral,
        topdown=topdown,
        reduce=reduce,
        attn_wq=Tensor(ad.uniform_init(rng, d, d), requires_grad=True),
        attn_wk=Tensor(ad.uniform_init(rng, d, d), requires_grad=True),
        attn_wv=Tensor(ad.uniform_init(rng, d, d), requires_grad=True),
        attn_wo=Tensor(ad.uniform_init(rng, d, d), requires_grad=True),
        ffn_w1=Tensor(ad.uniform_init(rng, d, 4 * d), requires_grad=True),
        ffn_w2=Tensor(ad.uniform_init(rng, 4 * d, d), requires_grad=True),
        heads=heads,
    )


def fuse_topdown(levels: list[Tensor], params: ExtractorParams,
                 specs: tuple[LevelSpec, ...]) -> list[Tensor]:
    """Top-down fusion: level 1 passes through; each finer level adds the
    upsampled previous fused level through the channel adapters."""
    fused = [levels[0]]
    for i in range(1, len(levels)):
        prev, cur = specs[i - 1], specs[i]
        if cur.width != 2 * prev.width or cur.height != 2 * prev.height:
            raise ShapeError("fuse_topdown", (prev.width, prev.height), (cur.width, cur.height),
                             reason=f"level {i + 1} is not 2x the previous level:")
        up = ad.gather_rows(fused[-1], upsample_indices(prev.width, prev.height))
        own = ad.matmul(levels[i], params.lateral[i - 1])
        fused.append(ad.add(own, ad.matmul(up, params.topdown[i - 1])))
    return fused


def tokenize(fused: list[Tensor], params: ExtractorParams) -> Tensor:
    """Reduce each fused level to d channels and stack level-major."""
    reduced = [ad.matmul(lvl, r) for lvl, r in zip(fused, params.reduce)]
    return reduced[0] if len(reduced) == 1 else ad.concat(reduced, axis=0)


def project_heads(x: Tensor, w: Tensor, heads: int) -> list[Tensor]:
    """Project tokens and split the result into per-head column blocks."""
    d = w.shape[1]
    if d % heads != 0:
        raise ConfigError(f"projection width {d} not divisible by {heads} heads")
    per = d // heads
    proj = ad.matmul(x, w)
    return [ad.slice_cols(proj, m * per, (m + 1) * per) for m in range(heads)]


def attend(q_heads: list[Tensor], k_heads: list[Tensor], v_heads: list[Tensor],
           wo: Tensor, collect: list[np.ndarray] | None = None) -> Tensor:
    """Scaled dot-product attention per head, concatenated and projected.

    ``collect``, if given, receives a detached copy of each head's
    attention weights.
    """
    outs = []
    for qm, km, vm in zip(q_heads, k_heads, v_heads):
        scale = 1.0 / math.sqrt(qm.shape[1])
        weights = ad.softmax_rows(ad.scale(ad.matmul(qm, ad.transpose(km)), scale))
        if collect is not None:
            collect.append(weights.data.copy())
        outs.append(ad.matmul(weights, vm))
    merged = outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)
    return ad.matmul(merged, wo)


def self_attend(x: Tensor, params: ExtractorParams) -> Tensor:
    """One MHSA layer plus one FFN, each with a residual connection."""
    heads = params.heads
    attn = attend(project_heads(x, params.attn_wq, heads),
                  project_heads(x, params.attn_wk, heads),
                  project_heads(x, params.attn_wv, heads),
                  params.attn_wo)
    x1 = ad.add(x, attn)
    ffn = ad.matmul(ad.tanh(ad.matmul(x1, params.ffn_w1)), params.ffn_w2)
    return ad.add(x1, ffn)


def positional_table(n_tokens: int, d: int) -> np.ndarray:
    """Fixed sinusoidal encodings over the flat token index.

    Deterministic; added to the token matrix only where attention keys are
    formed, so values stay position-free.
    """
    if n_tokens < 1 or d < 1:
        raise ConfigError(f"positional table needs positive sizes, got ({n_tokens}, {d})")
    pos = np.arange(n_tokens, dtype=np.float64)[:, None]
    idx = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / d)
    return np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))


def extract_tokens(params: ExtractorParams, pyramid: FeaturePyramid,
                   specs: tuple[LevelSpec, ...]) -> Tensor:
    """Full extractor pipeline: fuse, reduce, flatten, self-attend."""
    got = pyramid.specs
    if got != tuple(specs):
        raise ShapeError("extract_tokens", *(tuple(s.__dict__.values()) for s in got),
                         reason="pyramid geometry does not match model:")
    levels = [Tensor(level_matrix(lvl)) for lvl in pyramid.levels]
    fused = fuse_topdown(levels, params, specs)
    return self_attend(tokenize(fused, params), params)
