"""The full hashing model: extractor + query decoder under one config."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from . import extractor as ex
from .autodiff import Tensor
from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; ``branches`` only affects training."""

    levels: tuple[ex.LevelSpec, ...]
    d: int
    k: int
    heads: int = 8
    branches: int = 1

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ConfigError("at least one pyramid level required")
        for spec in self.levels:
            spec.validate()
        if self.k < 1:
            raise ConfigError(f"code length must be >= 1, got {self.k}")
        if self.d < 1 or self.d % self.heads != 0:
            raise ConfigError(f"width {self.d} not divisible by {self.heads} heads")
        if self.branches < 1 or self.d % self.branches != 0:
            raise ConfigError(f"width {self.d} not divisible into {self.branches} branches")

    @property
    def n_tokens(self) -> int:
        return sum(s.sites for s in self.levels)

    @property
    def train_bits(self) -> int:
        return self.branches * self.k


class HashModel:
    """Holds all learnable tensors plus the fixed positional table."""

    def __init__(self, config: ModelConfig, extractor: ex.ExtractorParams,
                 decoder_params: dec.DecoderParams, queries: Tensor):
        self.config = config
        self.extractor = extractor
        self.decoder = decoder_params
        self.queries = queries
        self.positions = ex.positional_table(config.n_tokens, config.d)

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "HashModel":
        ss = np.random.SeedSequence(seed)
        s_ext, s_q, s_dec = ss.spawn(3)
        extractor = ex.init_extractor_params(config.levels, config.d, config.heads,
                                             np.random.default_rng(s_ext))
        queries = Tensor(dec.init_queries(config.k, config.d, np.random.default_rng(s_q)),
                         requires_grad=True)
        decoder_params = dec.init_decoder_params(config.d, config.heads,
                                                 np.random.default_rng(s_dec))
        return cls(config, extractor, decoder_params, queries)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """All learnable tensors in the fixed persistence order."""
        named: list[tuple[str, Tensor]] = []
        for i, (lat, top) in enumerate(zip(self.extractor.lateral, self.extractor.topdown)):
            named.append((f"fuse.lateral{i + 2}", lat))
            named.append((f"fuse.topdown{i + 2}", top))
        for j, r in enumerate(self.extractor.reduce):
            named.append((f"reduce{j + 1}", r))
        named += [("attn.wq", self.extractor.attn_wq), ("attn.wk", self.extractor.attn_wk),
                  ("attn.wv", self.extractor.attn_wv), ("attn.wo", self.extractor.attn_wo),
                  ("ffn.w1", self.extractor.ffn_w1), ("ffn.w2", self.extractor.ffn_w2),
                  ("queries", self.queries),
                  ("dec.wq", self.decoder.wq), ("dec.wk", self.decoder.wk),
                  ("dec.wv", self.decoder.wv), ("dec.wo", self.decoder.wo),
                  ("dec.w", self.decoder.w)]
        return named

    def _param_slots(self) -> dict[str, tuple]:
        slots: dict[str, tuple] = {}
        for i in range(len(self.extractor.lateral)):
            slots[f"fuse.lateral{i + 2}"] = (self.extractor.lateral, i)
            slots[f"fuse.topdown{i + 2}"] = (self.extractor.topdown, i)
        for j in range(len(self.extractor.reduce)):
            slots[f"reduce{j + 1}"] = (self.extractor.reduce, j)
        slots.update({"attn.wq": (self.extractor, "attn_wq"),
                      "attn.wk": (self.extractor, "attn_wk"),
                      "attn.wv": (self.extractor, "attn_wv"),
                      "attn.wo": (self.extractor, "attn_wo"),
                      "ffn.w1": (self.extractor, "ffn_w1"),
                      "ffn.w2": (self.extractor, "ffn_w2"),
                      "queries": (self, "queries"),
                      "dec.wq": (self.decoder, "wq"), "dec.wk": (self.decoder, "wk"),
                      "dec.wv": (self.decoder, "wv"), "dec.wo": (self.decoder, "wo"),
                      "dec.w": (self.decoder, "w")})
        return slots

    def replace_parameter(self, name: str, tensor: Tensor) -> None:
        """Rebind a named parameter to a different Tensor object.

        Used by checkpoint loading and by gradient checks that need the
        model to compute through externally-owned tensors.
        """
        container, key = self._param_slots()[name]
        expected = (container[key] if isinstance(key, int) else getattr(container, key)).shape
        if tensor.shape != expected:
            raise ConfigError(f"parameter {name}: shape {tensor.shape} != expected {expected}")
        if isinstance(key, int):
            container[key] = tensor
        else:
            setattr(container, key, tensor)

    def tokens(self, pyramid: ex.FeaturePyramid) -> Tensor:
        return ex.extract_tokens(self.extractor, pyramid, self.config.levels)

    def train_logits(self, pyramid: ex.FeaturePyramid) -> Tensor:
        """(branches * k, 1) logits, branch-major; branch 0 is the original."""
        return dec.branch_logits(self.queries, self.tokens(pyramid), self.positions,
                                 self.decoder, self.config.branches)

    def infer_logits(self, pyramid: ex.FeaturePyramid) -> Tensor:
        """(k, 1) logits from the original queries; independent of branches."""
        return dec.branch_logits(self.queries, self.tokens(pyramid), self.positions,
                                 self.decoder, 1)

    def infer_code(self, pyramid: ex.FeaturePyramid) -> np.ndarray:
        with ad.no_grad():
            logits = self.infer_logits(pyramid)
        return dec.sign_codes(logits.data)

    def attention_rows(self, pyramid: ex.FeaturePyramid) -> np.ndarray:
        """Head-averaged attention of each original query over all tokens."""
        collected: list[np.ndarray] = []
        with ad.no_grad():
            dec.branch_logits(self.queries, self.tokens(pyramid), self.positions,
                              self.decoder, 1, collect=collected)
        return np.mean(collected, axis=0)

    def snap_to_float32(self) -> None:
        """Round every parameter to its float32 value (kept as float64).

        Checkpoints store float32; snapping makes the in-memory model
        agree bit-for-bit with what a save/load round trip reproduces.
        """
        for _, t in self.named_parameters():
            t.data = t.data.astype(np.float32).astype(np.float64)
