"""Deterministic synthetic fine-grained dataset generator.

Each class is defined by a distinct binary signature over a pool of
latent attributes.  Every attribute owns a fixed random template per
pyramid level (a Gaussian spatial bump times a random channel direction);
an image is the sum of its class's active templates, with per-image
location jitter and additive Gaussian noise.  Setting ``noise`` to zero
disables both corruptions, so noiseless images equal their class
prototype exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .extractor import FeaturePyramid, LevelSpec
from .manifest import write_dataset


@dataclass(frozen=True)
class SynthSpec:
    classes: int
    attributes: int
    images_per_class: int
    noise: float
    levels: tuple[LevelSpec, ...]
    seed: int
    jitter: float = 1.0  # max offset at the finest level; inactive when noise == 0
    amplitude: float = 3.0

    def __post_init__(self):
        if self.classes < 1 or self.attributes < 1 or self.images_per_class < 1:
            raise DataError("classes, attributes, and images per class must be positive")
        if self.noise < 0:
            raise DataError(f"noise must be nonnegative, got {self.noise}")


def default_spec(classes: int = 50, images_per_class: int = 6, noise: float = 0.1,
                 seed: int = 0) -> SynthSpec:
    """Desk-scale default geometry: two levels, 8x8x32 over 16x16x16."""
    return SynthSpec(classes=classes, attributes=24, images_per_class=images_per_class,
                     noise=noise, seed=seed,
                     levels=(LevelSpec(32, 8, 8), LevelSpec(16, 16, 16)))


def _distinct_signatures(rng: np.random.Generator, classes: int, attributes: int) -> np.ndarray:
    if attributes < 63 and classes > 2 ** attributes:
        raise DataError(
            f"signature collision: {classes} classes need distinct signatures "
            f"but only {2 ** attributes} exist over {attributes} attributes")
    seen: set[tuple] = set()
    rows = []
    attempts = 0
    while len(rows) < classes:
        sig = tuple(rng.integers(0, 2, size=attributes).tolist())
        attempts += 1
        if attempts > 200 * classes:
            raise DataError("signature collision: could not draw distinct signatures")
        if sig in seen:
            continue
        seen.add(sig)
        rows.append(sig)
    return np.array(rows, dtype=np.int8)


@dataclass
class AttributeTemplate:
    """One attribute's appearance at one level: bump center, width, channels."""

    center: tuple[float, float]
    rho: float
    channel: np.ndarray  # (channels,)

    def render(self, spec: LevelSpec, offset: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
        xs = np.arange(spec.width, dtype=np.float64)
        ys = np.arange(spec.height, dtype=np.float64)
        dx = (xs - self.center[0] - offset[0])[:, None]
        dy = (ys - self.center[1] - offset[1])[None, :]
        bump = np.exp(-(dx * dx + dy * dy) / (2.0 * self.rho * self.rho))
        return self.channel[:, None, None] * bump[None, :, :]


@dataclass
class SynthResult:
    spec: SynthSpec
    signatures: np.ndarray  # (classes, attributes) in {0, 1}
    templates: list[list[AttributeTemplate]]  # [attribute][level]
    pyramids: list[FeaturePyramid] = field(default_factory=list)
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def specs(self) -> tuple[LevelSpec, ...]:
        return self.spec.levels

    @property
    def count(self) -> int:
        return len(self.pyramids)

    def pyramid(self, i: int) -> FeaturePyramid:
        return self.pyramids[i]

    def class_prototype(self, label: int) -> FeaturePyramid:
        """Noise- and jitter-free sum of the class's active templates."""
        levels = []
        for j, lspec in enumerate(self.spec.levels):
            acc = np.zeros((lspec.channels, lspec.width, lspec.height))
            for a in np.flatnonzero(self.signatures[label]):
                acc += self.templates[a][j].render(lspec)
            levels.append(acc)
        return FeaturePyramid(levels, image_id=-1)


def build(spec: SynthSpec) -> SynthResult:
    """Materialize the dataset in memory; byte-deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    signatures = _distinct_signatures(rng, spec.classes, spec.attributes)
    templates: list[list[AttributeTemplate]] = []
    for _ in range(spec.attributes):
        per_level = []
        for lspec in spec.levels:
            center = (rng.uniform(1.0, lspec.width - 1.0), rng.uniform(1.0, lspec.height - 1.0))
            rho = max(1.0, min(lspec.width, lspec.height) / 6.0)
            channel = spec.amplitude * rng.normal(size=lspec.channels)
            per_level.append(AttributeTemplate(center, rho, channel))
        templates.append(per_level)
    result = SynthResult(spec, signatures, templates)

    finest = spec.levels[-1]
    labels = []
    for label in range(spec.classes):
        active = np.flatnonzero(signatures[label])
        for _ in range(spec.images_per_class):
            jitter = {}
            if spec.noise > 0:
                for a in active:
                    jitter[a] = rng.uniform(-spec.jitter, spec.jitter, size=2)
            levels = []
            for j, lspec in enumerate(spec.levels):
                sx = lspec.width / finest.width
                sy = lspec.height / finest.height
                acc = np.zeros((lspec.channels, lspec.width, lspec.height))
                for a in active:
                    off = jitter.get(a, np.zeros(2))
                    acc += templates[a][j].render(lspec, (off[0] * sx, off[1] * sy))
                if spec.noise > 0:
                    acc += rng.normal(0.0, spec.noise, size=acc.shape)
                levels.append(acc)
            result.pyramids.append(FeaturePyramid(levels, image_id=len(labels)))
            labels.append(label)
    result.labels = np.array(labels, dtype=np.int64)
    return result


def generate(spec: SynthSpec, out_dir, name: str = "synthetic"):
    """Build the dataset and write it in the manifest format."""
    result = build(spec)
    path = write_dataset(out_dir, name, result.pyramids, result.labels)
    return path, result


def split(labels: np.ndarray, query_fraction: float, seed: int
          ) -> tuple[np.ndarray, np.ndarray]:
    """Stratified per-class query/gallery split, deterministic per seed."""
    labels = np.asarray(labels)
    if not 0.0 < query_fraction < 1.0:
        raise DataError(f"query fraction must be in (0, 1), got {query_fraction}")
    rng = np.random.default_rng(seed)
    query, gallery = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < 2:
            raise DataError(f"class {cls} has {members.size} image(s); need at least 2 to split")
        picked = rng.permutation(members)
        n_query = int(round(query_fraction * members.size))
        n_query = min(max(n_query, 1), members.size - 1)
        query.extend(picked[:n_query])
        gallery.extend(picked[n_query:])
    return np.sort(np.array(query, dtype=np.int64)), np.sort(np.array(gallery, dtype=np.int64))
