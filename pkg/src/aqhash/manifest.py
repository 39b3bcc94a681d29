"""Dataset manifest ingestion and raw feature-file IO.

A dataset is a JSON manifest next to a raw feature file of little-endian
float32 values.  The feature file holds, per image, each pyramid level in
order as a C-contiguous (channels, width, height) block, so its length
must equal count * sum_j(c_j * w_j * h_j) * 4 bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .extractor import FeaturePyramid, LevelSpec

MANIFEST_NAME = "manifest.json"
FEATURES_NAME = "features.f32"


@dataclass
class Manifest:
    name: str
    count: int
    levels: tuple[LevelSpec, ...]
    labels: np.ndarray
    feature_file: str  # relative to the manifest's directory
    endianness: str = "little"

    @property
    def floats_per_image(self) -> int:
        return sum(s.channels * s.sites for s in self.levels)


def write_dataset(out_dir: Path, name: str, pyramids: list[FeaturePyramid],
                  labels: np.ndarray, feature_file: str = FEATURES_NAME) -> Path:
    """Write manifest + feature file; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not pyramids:
        raise ManifestError("cannot write an empty dataset")
    specs = pyramids[0].specs
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(pyramids),):
        raise ManifestError(f"label count {labels.shape} does not match {len(pyramids)} images")
    with open(out_dir / feature_file, "wb") as fh:
        for pyr in pyramids:
            if pyr.specs != specs:
                raise ManifestError(f"image {pyr.image_id}: geometry {pyr.specs} != {specs}")
            for lvl in pyr.levels:
                fh.write(np.ascontiguousarray(lvl, dtype="<f4").tobytes())
    doc = {
        "name": name,
        "count": len(pyramids),
        "levels": [[s.channels, s.width, s.height] for s in specs],
        "labels": labels.tolist(),
        "feature_file": feature_file,
        "endianness": "little",
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(doc, indent=1))
    return manifest_path


def _require(doc: dict, key: str):
    if key not in doc:
        raise ManifestError(f"manifest missing required field '{key}'")
    return doc[key]


def load_manifest(path: Path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest {path} is not valid JSON: {e}")
    count = int(_require(doc, "count"))
    if count < 1:
        raise ManifestError(f"empty dataset: count={count}")
    levels = tuple(LevelSpec(*map(int, triple)) for triple in _require(doc, "levels"))
    if not levels:
        raise ManifestError("manifest declares no pyramid levels")
    for spec in levels:
        if spec.channels < 1 or spec.width < 1 or spec.height < 1:
            raise ManifestError(f"invalid level geometry {spec}")
    labels = np.asarray(_require(doc, "labels"), dtype=np.int64)
    if labels.shape != (count,):
        raise ManifestError(f"label list length {labels.size} != count {count}")
    if labels.size and labels.min() < 0:
        raise ManifestError("labels must be nonnegative")
    endianness = _require(doc, "endianness")
    if endianness != "little":
        raise ManifestError(f"unsupported endianness tag '{endianness}'")
    return Manifest(name=str(_require(doc, "name")), count=count, levels=levels,
                    labels=labels, feature_file=str(_require(doc, "feature_file")))


class Dataset:
    """Validated dataset handle with lazily-read pyramids."""

    def __init__(self, manifest: Manifest, feature_path: Path):
        self.manifest = manifest
        self._stride = manifest.floats_per_image
        expected = manifest.count * self._stride * 4
        actual = feature_path.stat().st_size
        if actual != expected:
            raise ManifestError(
                f"feature file {feature_path}: expected {expected} bytes "
                f"({manifest.count} images x {self._stride} floats), found {actual}")
        self._raw = np.memmap(feature_path, dtype="<f4", mode="r")
        self._scan_finite()

    def _scan_finite(self, block: int = 1 << 20) -> None:
        for start in range(0, self._raw.size, block):
            chunk = self._raw[start:start + block]
            bad = np.flatnonzero(~np.isfinite(chunk))
            if bad.size:
                offset = start + int(bad[0])
                raise ManifestError(
                    f"non-finite value at float offset {offset} "
                    f"(image {offset // self._stride})")

    @property
    def specs(self) -> tuple[LevelSpec, ...]:
        return self.manifest.levels

    @property
    def labels(self) -> np.ndarray:
        return self.manifest.labels

    @property
    def count(self) -> int:
        return self.manifest.count

    def pyramid(self, i: int) -> FeaturePyramid:
        if not 0 <= i < self.manifest.count:
            raise ManifestError(f"image index {i} out of range [0, {self.manifest.count})")
        flat = np.asarray(self._raw[i * self._stride:(i + 1) * self._stride], dtype=np.float64)
        levels, pos = [], 0
        for spec in self.manifest.levels:
            n = spec.channels * spec.sites
            levels.append(flat[pos:pos + n].reshape(spec.channels, spec.width, spec.height))
            pos += n
        return FeaturePyramid(levels, image_id=i)


def ingest(manifest_path: Path) -> Dataset:
    """Load and validate a dataset; all structural checks happen here."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    return Dataset(manifest, manifest_path.parent / manifest.feature_file)


def write_indices(path: Path, indices: np.ndarray) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in indices))


def read_indices(path: Path) -> np.ndarray:
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    except FileNotFoundError:
        raise ManifestError(f"index file not found: {path}")
    try:
        return np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as e:
        raise ManifestError(f"index file {path}: {e}")
