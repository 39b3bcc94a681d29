"""Pairwise inner-product objective and alternating training loop.

The loss couples each sampled image's relaxed code v (tanh of the
training logits, length branches*k) to every gallery database code z
through (v.z / k_train - S)^2, plus a quantization penalty tying v to its
own database code.  Network parameters are trained by momentum SGD on
mini-batches of a resampled subset; database codes are then refreshed by
bit-column coordinate descent with a closed-form sign solution, which
never increases the objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericalError, ShapeError
from .model import HashModel, ModelConfig


@dataclass
class TrainConfig:
    k: int
    d: int
    heads: int = 8
    branches: int = 1
    beta: float = 1.0
    gamma: float = 200.0
    learning_rate: float = 0.0003
    momentum: float = 0.90
    weight_decay: float = 0.0001
    batch_size: int = 16
    samples_per_epoch: int = 2000
    outer_iterations: int = 40
    inner_epochs: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError(f"loss weights must be nonnegative, got beta={self.beta} gamma={self.gamma}")
        if self.batch_size < 1 or self.samples_per_epoch < 1:
            raise ConfigError("batch size and samples per epoch must be positive")
        if self.outer_iterations < 0 or self.inner_epochs < 1:
            raise ConfigError("invalid outer/inner schedule")

    @property
    def train_bits(self) -> int:
        return self.branches * self.k


def similarity_from_labels(labels_a: np.ndarray, labels_b: np.ndarray) -> np.ndarray:
    """S[i, j] = 1 where labels match, else 0."""
    return (np.asarray(labels_a)[:, None] == np.asarray(labels_b)[None, :]).astype(np.float64)


def pairwise_loss(v: Tensor, codes: Tensor, sim_row: Tensor, k_train: int) -> Tensor:
    """sum_j (v.z_j / k_train - S_ij)^2 for one sample's relaxed code."""
    if v.shape != (1, k_train) or codes.shape[1] != k_train:
        raise ShapeError("pairwise_loss", v.shape, codes.shape,
                         reason=f"expected code length {k_train}, got")
    if sim_row.shape != (1, codes.shape[0]):
        raise ShapeError("pairwise_loss", sim_row.shape, codes.shape)
    scores = ad.scale(ad.matmul(v, ad.transpose(codes)), 1.0 / k_train)
    return ad.sum_sq(ad.sub(scores, sim_row))


def quantization_loss(v: Tensor, z_row: Tensor) -> Tensor:
    """sum_c (z_c - v_c)^2: the binarization gap for one sample."""
    if v.shape != z_row.shape:
        raise ShapeError("quantization_loss", v.shape, z_row.shape)
    return ad.sum_sq(ad.sub(z_row, v))


def batch_loss(model: HashModel, pyramids: list, gallery_rows: np.ndarray,
               db_codes: np.ndarray, sim_rows: np.ndarray,
               beta: float, gamma: float) -> tuple[Tensor, float, float]:
    """Total objective over a mini-batch; returns (graph root, pair, quant).

    Relaxed codes are tanh of the concatenated branch logits, so every
    entry stays strictly inside (-1, 1).
    """
    if len(pyramids) == 0:
        raise ConfigError("batch_loss: empty batch")
    k_train = model.config.train_bits
    codes_t = Tensor(db_codes)
    pair_terms, quant_terms = [], []
    for pyr, row, sim in zip(pyramids, gallery_rows, sim_rows):
        v = ad.tanh(ad.transpose(model.train_logits(pyr)))
        pair_terms.append(pairwise_loss(v, codes_t, Tensor(sim.reshape(1, -1)), k_train))
        quant_terms.append(quantization_loss(v, Tensor(db_codes[row].reshape(1, -1))))
    pair = pair_terms[0]
    for t in pair_terms[1:]:
        pair = ad.add(pair, t)
    quant = quant_terms[0]
    for t in quant_terms[1:]:
        quant = ad.add(quant, t)
    total = ad.add(ad.scale(pair, beta), ad.scale(quant, gamma))
    return total, pair.item(), quant.item()


@dataclass
class SGDState:
    """Per-parameter momentum buffers, keyed by parameter name."""

    buffers: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(named_params: list[tuple[str, Tensor]], state: SGDState,
             learning_rate: float, momentum: float, weight_decay: float) -> None:
    """Momentum SGD with weight decay:
    buf <- momentum*buf + (grad + wd*param); param <- param - lr*buf."""
    for name, p in named_params:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        buf = state.buffers.get(name)
        if buf is None:
            buf = np.zeros_like(p.data)
        buf = momentum * buf + (grad + weight_decay * p.data)
        state.buffers[name] = buf
        p.data = p.data - learning_rate * buf
        p.zero_grad()


def sample_omega(gallery: np.ndarray, count: int, seed) -> np.ndarray:
    """Uniform sample of gallery entries without replacement, sorted."""
    gallery = np.asarray(gallery)
    if count > gallery.size:
        raise ConfigError(f"cannot sample {count} from gallery of size {gallery.size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.sort(rng.choice(gallery, size=count, replace=False))


def eq6_objective(v_samples: np.ndarray, db_codes: np.ndarray, sim: np.ndarray,
                  beta: float, gamma: float, omega_rows: np.ndarray) -> float:
    """Plain-numpy value of the training objective with fixed network outputs."""
    k_train = db_codes.shape[1]
    pair = ((v_samples @ db_codes.T / k_train - sim) ** 2).sum()
    quant = ((db_codes[omega_rows] - v_samples) ** 2).sum()
    return float(beta * pair + gamma * quant)


def update_database_codes(db_codes: np.ndarray, v_samples: np.ndarray, sim: np.ndarray,
                          beta: float, gamma: float, omega_rows: np.ndarray,
                          max_sweeps: int = 100) -> np.ndarray:
    """Refresh database codes by bit-column coordinate descent.

    Holding all other columns fixed, each entry's objective is linear in
    that entry (the quadratic term is constant on {-1,+1}), so the column
    optimum is the negative sign of the linear coefficient; ties keep the
    current value.  Sweeps repeat until no entry flips or the cap is hit.
    The objective never increases.
    """
    Z = np.array(db_codes, dtype=np.float64)
    V = np.asarray(v_samples, dtype=np.float64)
    k_train = Z.shape[1]
    if V.shape[1] != k_train:
        raise ShapeError("update_database_codes", V.shape, Z.shape)
    residual = V @ Z.T  # (samples, gallery), maintained incrementally
    gamma_pull = np.zeros((Z.shape[0], k_train))
    gamma_pull[omega_rows] = -2.0 * gamma * V
    for _ in range(max_sweeps):
        changed = False
        for c in range(k_train):
            vc = V[:, c]
            zc = Z[:, c]
            without = residual - np.outer(vc, zc)
            linear = (2.0 * beta / k_train) * (vc @ (without / k_train - sim)) + gamma_pull[:, c]
            new = np.where(linear < 0.0, 1.0, np.where(linear > 0.0, -1.0, zc))
            if not np.array_equal(new, zc):
                changed = True
                residual += np.outer(vc, new - zc)
                Z[:, c] = new
        if not changed:
            break
    return Z


@dataclass
class EpochRecord:
    outer: int
    epoch: int
    loss: float
    pairwise: float
    quantization: float

    def line(self) -> str:
        return (f"outer={self.outer} epoch={self.epoch} loss={self.loss:.6f} "
                f"pairwise={self.pairwise:.6f} quantization={self.quantization:.6f}")


def relaxed_codes(model: HashModel, pyramids: list) -> np.ndarray:
    """tanh of the concatenated branch logits for each image (no graph)."""
    rows = []
    with ad.no_grad():
        for pyr in pyramids:
            rows.append(np.tanh(model.train_logits(pyr).data.reshape(-1)))
    return np.array(rows)


def pipeline_grad_check(config: TrainConfig, levels=None, step: float = 1e-6,
                        tolerance: float = 1e-5, n_images: int = 2,
                        gallery_size: int = 5) -> ad.GradCheckReport:
    """Finite-difference check of the entire trainable pipeline.

    Builds a random pyramid batch and database, then verifies the
    gradient of the full objective (extractor -> decoder branches ->
    pairwise + quantization loss) for every parameter, including the
    queries shared across all branches.
    """
    from .extractor import FeaturePyramid, LevelSpec

    if levels is None:
        levels = (LevelSpec(3, 2, 2), LevelSpec(2, 4, 4))
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC11EC4]))
    model_cfg = ModelConfig(levels=tuple(levels), d=config.d, k=config.k,
                            heads=config.heads, branches=config.branches)
    model = HashModel.init(model_cfg, config.seed)
    pyramids = [FeaturePyramid([rng.normal(size=(s.channels, s.width, s.height))
                                for s in levels]) for _ in range(n_images)]
    db_codes = rng.choice(np.array([-1.0, 1.0]), size=(gallery_size, model_cfg.train_bits))
    sim = rng.integers(0, 2, size=(n_images, gallery_size)).astype(np.float64)
    rows = rng.integers(0, gallery_size, size=n_images)
    init = {name: t.data.copy() for name, t in model.named_parameters()}

    def build(params):
        for name, tensor in params.items():
            model.replace_parameter(name, tensor)
        loss, _, _ = batch_loss(model, pyramids, rows, db_codes, sim,
                                config.beta, config.gamma)
        return loss

    return ad.grad_check(build, init, step=step, tolerance=tolerance)


def train(dataset, gallery_indices: np.ndarray, config: TrainConfig
          ) -> tuple[HashModel, list[EpochRecord], np.ndarray]:
    """Alternating optimization over the gallery set.

    Each outer iteration samples a training subset, runs mini-batch SGD
    for the configured inner epochs against the fixed database codes,
    then refreshes the sampled rows' database codes.  Returns the trained
    model (parameters snapped to their float32 values, matching what the
    checkpoint preserves), the per-epoch metric records, and the final
    database codes.
    """
    gallery_indices = np.asarray(gallery_indices)
    n_gallery = gallery_indices.size
    if n_gallery == 0:
        raise ConfigError("train: empty gallery")
    model_cfg = ModelConfig(levels=tuple(dataset.specs), d=config.d, k=config.k,
                            heads=config.heads, branches=config.branches)
    model = HashModel.init(model_cfg, config.seed)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    k_train = config.train_bits
    db_codes = rng.choice(np.array([-1.0, 1.0]), size=(n_gallery, k_train))
    labels = np.asarray(dataset.labels)[gallery_indices]

    cache: dict[int, object] = {}

    def pyramid(row: int):
        if row not in cache:
            cache[row] = dataset.pyramid(int(gallery_indices[row]))
        return cache[row]

    history: list[EpochRecord] = []
    state = SGDState()
    for outer in range(config.outer_iterations):
        omega = sample_omega(np.arange(n_gallery), config.samples_per_epoch, rng)
        sim = similarity_from_labels(labels[omega], labels)
        for epoch in range(config.inner_epochs):
            order = rng.permutation(omega.size)
            tot = tot_pair = tot_quant = 0.0
            for start in range(0, omega.size, config.batch_size):
                chunk = order[start:start + config.batch_size]
                rows = omega[chunk]
                pyrs = [pyramid(r) for r in rows]
                loss, pair, quant = batch_loss(model, pyrs, rows, db_codes,
                                               sim[chunk], config.beta, config.gamma)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericalError(
                        f"non-finite loss {value} at outer={outer} epoch={epoch} "
                        f"batch_start={start}")
                loss.backward()
                sgd_step(model.named_parameters(), state, config.learning_rate,
                         config.momentum, config.weight_decay)
                tot, tot_pair, tot_quant = tot + value, tot_pair + pair, tot_quant + quant
            history.append(EpochRecord(outer, epoch, tot, tot_pair, tot_quant))
        v_omega = relaxed_codes(model, [pyramid(r) for r in omega])
        db_codes = update_database_codes(db_codes, v_omega, sim, config.beta,
                                         config.gamma, omega)
    model.snap_to_float32()
    return model, history, db_codes
