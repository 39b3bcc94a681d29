"""Bit-packed binary codes, popcount Hamming ranking, and mAP.

Codes over {-1,+1} are stored little-endian-within-word: bit b of a code
lives in word b // 64 at bit position b % 64, with +1 encoded as 1.
Unused high bits of the last word are always zero, which makes XOR +
popcount give exact Hamming distances and preserves the identity
dot(a, b) = k - 2 * hamming(a, b).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

WORD_BITS = 64
_MAGIC = b"AQHC"
_VERSION = 1
_SHIFTS = np.arange(WORD_BITS, dtype=np.uint64)


def words_per_code(k: int) -> int:
    return (k + WORD_BITS - 1) // WORD_BITS


@dataclass
class PackedCodes:
    """Immutable packed code matrix: one row of uint64 words per code."""

    k: int
    words: np.ndarray

    def __post_init__(self):
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if self.words.ndim != 2 or self.words.shape[1] != words_per_code(self.k):
            raise ShapeError("packed_codes", self.words.shape,
                             reason=f"expected {words_per_code(self.k)} words per code, got shape")

    @property
    def count(self) -> int:
        return self.words.shape[0]

    def code(self, i: int) -> "PackedCodes":
        return PackedCodes(self.k, self.words[i:i + 1])


def _tail_mask(k: int) -> np.ndarray:
    mask = np.full(words_per_code(k), np.uint64(0xFFFFFFFFFFFFFFFF))
    rem = k % WORD_BITS
    if rem:
        mask[-1] = (np.uint64(1) << np.uint64(rem)) - np.uint64(1)
    return mask


def pack(codes: np.ndarray) -> PackedCodes:
    """Pack a (count, k) matrix over {-1,+1} into 64-bit words."""
    codes = np.atleast_2d(np.asarray(codes))
    if not np.isin(codes, (-1, 1)).all():
        raise DataError("pack: entries must be exactly -1 or +1")
    count, k = codes.shape
    n_words = words_per_code(k)
    bits = np.zeros((count, n_words * WORD_BITS), dtype=np.uint64)
    bits[:, :k] = codes > 0
    words = np.bitwise_or.reduce(bits.reshape(count, n_words, WORD_BITS) << _SHIFTS, axis=2)
    packed = PackedCodes(k, words)
    assert (packed.words & ~_tail_mask(k) == 0).all(), "unused bits must be zero"
    return packed


def unpack(packed: PackedCodes) -> np.ndarray:
    """Inverse of pack: (count, k) int8 matrix over {-1,+1}."""
    bits = (packed.words[:, :, None] >> _SHIFTS) & np.uint64(1)
    flat = bits.reshape(packed.count, -1)[:, :packed.k]
    return (2 * flat.astype(np.int8) - 1)


def hamming(a: PackedCodes, b: PackedCodes) -> np.ndarray:
    """All-pairs Hamming distances, shape (a.count, b.count)."""
    if a.k != b.k:
        raise ShapeError("hamming", (a.k,), (b.k,), reason="code lengths differ:")
    x = a.words[:, None, :] ^ b.words[None, :, :]
    return np.bitwise_count(x).sum(axis=2, dtype=np.int64)


def rank_query(query: PackedCodes, gallery: PackedCodes) -> np.ndarray:
    """Gallery indices by ascending Hamming distance, ties by index."""
    if query.count != 1:
        raise ShapeError("rank_query", (query.count,), reason="expected a single query, got count")
    dist = hamming(query, gallery)[0]
    return np.argsort(dist, kind="stable")


def rank_all(queries: PackedCodes, gallery: PackedCodes) -> np.ndarray:
    """(n_queries, gallery_size) ranking matrix with the same tie rule."""
    dist = hamming(queries, gallery)
    return np.argsort(dist, axis=1, kind="stable")


def average_precision(relevance) -> float:
    """AP along one ranked list; zero relevant items contribute AP = 0."""
    rel = np.asarray(relevance, dtype=bool)
    total = int(rel.sum())
    if total == 0:
        return 0.0
    positions = np.flatnonzero(rel) + 1
    return float((np.arange(1, total + 1) / positions).mean())


def mean_average_precision(rankings: np.ndarray, query_labels: np.ndarray,
                           gallery_labels: np.ndarray) -> float:
    """Mean AP over full-gallery rankings under label-match relevance."""
    rankings = np.atleast_2d(rankings)
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    if rankings.shape[0] == 0:
        raise DataError("mean_average_precision: empty query set")
    if rankings.shape != (query_labels.size, gallery_labels.size):
        raise ShapeError("mean_average_precision", rankings.shape,
                         (query_labels.size, gallery_labels.size))
    aps = [average_precision(gallery_labels[rankings[i]] == query_labels[i])
           for i in range(query_labels.size)]
    return float(np.mean(aps))


def encode_database(model, dataset, indices=None) -> PackedCodes:
    """Hash every selected image with the inference path and pack the codes."""
    if indices is None:
        indices = np.arange(dataset.count)
    rows = [model.infer_code(dataset.pyramid(int(i))) for i in np.asarray(indices)]
    if not rows:
        raise DataError("encode_database: no images selected")
    return pack(np.array(rows))


# --- AQHC codes file -------------------------------------------------------
# magic "AQHC", u32 version=1, u32 k, u64 count, then count * ceil(k/64)
# little-endian 64-bit words.

_HEADER = struct.Struct("<4sIIQ")


def save_codes(path: Path, packed: PackedCodes) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, packed.k, packed.count))
        fh.write(packed.words.astype("<u8").tobytes())


def load_codes(path: Path) -> PackedCodes:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"codes file not found: {path}")
    if len(raw) < _HEADER.size:
        raise DataError(f"codes file {path}: truncated header ({len(raw)} bytes)")
    magic, version, k, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise DataError(f"codes file {path}: bad magic {magic!r}")
    if version != _VERSION:
        raise DataError(f"codes file {path}: unsupported version {version}")
    expected = _HEADER.size + count * words_per_code(k) * 8
    if len(raw) != expected:
        raise DataError(f"codes file {path}: expected {expected} bytes, found {len(raw)}")
    words = np.frombuffer(raw, dtype="<u8", offset=_HEADER.size).astype(np.uint64)
    packed = PackedCodes(int(k), words.reshape(count, words_per_code(k)))
    if (packed.words & ~_tail_mask(packed.k)).any():
        raise DataError(f"codes file {path}: nonzero padding bits")
    return packed
