"""Query learning: per-bit attribute queries decoded via cross-attention.

Each of the k learnable queries attends over the extractor's token matrix
(keys are position-augmented, values are not) and the resulting
attribute feature is compressed to one logit by a shared direction
vector after L2 normalization.  During training, N-1 auxiliary branches
reuse the same decoder on circular-shifted copies of each query and all
branch outputs are concatenated branch-major; inference keeps only the
original queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .extractor import attend, project_heads


@dataclass
class DecoderParams:
    """Cross-attention projections plus the shared compression vector."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w: Tensor  # (d, 1), shared across all attributes
    heads: int


def init_decoder_params(d: int, heads: int, rng: np.random.Generator) -> DecoderParams:
    if d % heads != 0:
        raise ConfigError(f"embedding width {d} not divisible by {heads} heads")
    return DecoderParams(
        wq=Tensor(ad.uniform_init(rng, d, d), requires_grad=True),
        wk=Tensor(ad.uniform_init(rng, d, d), requires_grad=True),
        wv=Tensor(ad.uniform_init(rng, d, d), requires_grad=True),
        wo=Tensor(ad.uniform_init(rng, d, d), requires_grad=True),
        w=Tensor(ad.uniform_init(rng, d, 1), requires_grad=True),
        heads=heads,
    )


def init_queries(k: int, d: int, seed) -> np.ndarray:
    """k queries drawn i.i.d. uniform on [-1/sqrt(d), +1/sqrt(d)].

    Random initialization keeps the queries diverse from the start.
    ``seed`` may be an int or a numpy Generator.
    """
    if k < 1 or d < 1:
        raise ConfigError(f"need positive query count and width, got ({k}, {d})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ad.uniform_init(rng, k, d, bound=1.0 / np.sqrt(d))


def _shift_split(d: int, n_branches: int, shift: int) -> int:
    if n_branches < 1 or d % n_branches != 0:
        raise ConfigError(f"width {d} not divisible into {n_branches} sub-vectors")
    if not 1 <= shift <= n_branches - 1:
        raise ConfigError(f"shift {shift} out of range [1, {n_branches - 1}]")
    return (n_branches - shift) * (d // n_branches)


def transform_query(q: np.ndarray, n_branches: int, shift: int) -> np.ndarray:
    """Circular shift of the query's equal-length sub-vectors.

    Shift j moves the last j sub-vectors to the front:
    [q^1; ...; q^N] -> [q^{N-j+1}; ...; q^N; q^1; ...; q^{N-j}].
    Works on a single vector or row-wise on a matrix of queries.
    """
    q = np.asarray(q)
    split = _shift_split(q.shape[-1], n_branches, shift)
    return np.concatenate([q[..., split:], q[..., :split]], axis=-1)


def shift_queries(queries: Tensor, n_branches: int, shift: int) -> Tensor:
    """Graph version of ``transform_query`` applied to each query row."""
    split = _shift_split(queries.shape[1], n_branches, shift)
    d = queries.shape[1]
    return ad.concat([ad.slice_cols(queries, split, d),
                      ad.slice_cols(queries, 0, split)], axis=1)


def decode_attributes(q_eff: Tensor, tokens: Tensor, keyed_tokens: Tensor,
                      params: DecoderParams,
                      collect: list[np.ndarray] | None = None) -> Tensor:
    """Cross-attention decoding of one query set into attribute features.

    Keys come from the position-augmented tokens, values from the raw
    tokens; per-head results are concatenated and output-projected.
    """
    if q_eff.shape[1] != tokens.shape[1]:
        raise ShapeError("decode_attributes", q_eff.shape, tokens.shape)
    return attend(project_heads(q_eff, params.wq, params.heads),
                  project_heads(keyed_tokens, params.wk, params.heads),
                  project_heads(tokens, params.wv, params.heads),
                  params.wo, collect=collect)


def compress(attributes: Tensor, w: Tensor) -> Tensor:
    """One logit per attribute: the L2-normalized feature dotted with w.

    Invariant to positive rescaling of each attribute feature; an
    exactly-zero feature yields logit 0.
    """
    return ad.matmul(ad.normalize_rows(attributes), w)


def branch_logits(queries: Tensor, tokens: Tensor, positions: np.ndarray,
                  params: DecoderParams, n_branches: int,
                  collect: list[np.ndarray] | None = None) -> Tensor:
    """Compressed logits of all branches, concatenated branch-major.

    Branch 0 uses the original queries, branch j their shift-j transforms;
    every branch reuses the same decoder parameters, so the result is a
    (n_branches * k, 1) column whose first k entries equal the
    single-branch output.  Key/value projections are computed once and
    shared across branches.
    """
    keyed = ad.add(tokens, Tensor(positions))
    k_heads = project_heads(keyed, params.wk, params.heads)
    v_heads = project_heads(tokens, params.wv, params.heads)
    outs = []
    for j in range(n_branches):
        q_eff = queries if j == 0 else shift_queries(queries, n_branches, j)
        q_heads = project_heads(q_eff, params.wq, params.heads)
        a = attend(q_heads, k_heads, v_heads, params.wo,
                   collect=collect if j == 0 else None)
        outs.append(compress(a, params.w))
    return outs[0] if len(outs) == 1 else ad.concat(outs, axis=0)


def sign_codes(logits: np.ndarray) -> np.ndarray:
    """Binarize logits with the fixed convention sign(0) = +1."""
    flat = np.asarray(logits).reshape(-1)
    return np.where(flat >= 0.0, 1, -1).astype(np.int8)
