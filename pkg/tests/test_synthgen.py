import numpy as np
import pytest

from aqhash import synthgen
from aqhash.errors import DataError
from aqhash.extractor import LevelSpec


def flat(pyramid):
    return np.concatenate([lvl.ravel() for lvl in pyramid.levels])


class TestBuild:
    def test_noiseless_images_equal_prototypes(self):
        spec = synthgen.SynthSpec(classes=5, attributes=8, images_per_class=1,
                                  noise=0.0, seed=1,
                                  levels=(LevelSpec(4, 4, 4), LevelSpec(2, 8, 8)))
        data = synthgen.build(spec)
        for i, label in enumerate(data.labels):
            proto = data.class_prototype(int(label))
            for got, want in zip(data.pyramids[i].levels, proto.levels):
                np.testing.assert_array_equal(got, want)

    def test_deterministic_per_seed(self):
        spec = synthgen.default_spec(classes=6, images_per_class=2, seed=9)
        a = synthgen.build(spec)
        b = synthgen.build(spec)
        for pa, pb in zip(a.pyramids, b.pyramids):
            for la, lb in zip(pa.levels, pb.levels):
                np.testing.assert_array_equal(la, lb)

    def test_signature_collision_detected(self):
        with pytest.raises(DataError, match="collision"):
            synthgen.build(synthgen.SynthSpec(classes=5, attributes=2,
                                              images_per_class=1, noise=0.0, seed=0,
                                              levels=(LevelSpec(2, 2, 2),)))

    def test_nearest_prototype_separability(self):
        # the acceptance-scale dataset is linearly separable on raw features
        data = synthgen.build(synthgen.default_spec(classes=50, images_per_class=2,
                                                    noise=0.1, seed=0))
        protos = np.stack([flat(data.class_prototype(c)) for c in range(50)])
        correct = 0
        for i, label in enumerate(data.labels):
            d2 = ((protos - flat(data.pyramids[i])) ** 2).sum(axis=1)
            correct += int(np.argmin(d2) == label)
        assert correct == len(data.labels)

    def test_noiseless_within_class_distance_not_above_between(self):
        spec = synthgen.SynthSpec(classes=6, attributes=10, images_per_class=3,
                                  noise=0.0, seed=3,
                                  levels=(LevelSpec(4, 4, 4), LevelSpec(2, 8, 8)))
        data = synthgen.build(spec)
        feats = np.stack([flat(p) for p in data.pyramids])
        labels = data.labels
        for i in range(len(labels)):
            same = [np.linalg.norm(feats[i] - feats[j])
                    for j in range(len(labels)) if j != i and labels[j] == labels[i]]
            diff = [np.linalg.norm(feats[i] - feats[j])
                    for j in range(len(labels)) if labels[j] != labels[i]]
            assert max(same) <= min(diff)


class TestGenerate:
    def test_same_seed_byte_identical_files(self, tmp_path):
        spec = synthgen.default_spec(classes=4, images_per_class=2, seed=5)
        p1, _ = synthgen.generate(spec, tmp_path / "a")
        p2, _ = synthgen.generate(spec, tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()
        assert (p1.parent / "features.f32").read_bytes() == (p2.parent / "features.f32").read_bytes()


class TestSplit:
    def test_half_split_of_ten(self):
        labels = np.repeat(np.arange(3), 10)
        query, gallery = synthgen.split(labels, 0.5, seed=0)
        for cls in range(3):
            assert (labels[query] == cls).sum() == 5
            assert (labels[gallery] == cls).sum() == 5

    def test_disjoint_and_complete(self):
        labels = np.repeat(np.arange(5), 7)
        query, gallery = synthgen.split(labels, 0.4, seed=1)
        assert set(query) & set(gallery) == set()
        assert len(query) + len(gallery) == labels.size

    def test_proportions_within_one(self):
        labels = np.repeat(np.arange(4), 9)
        query, _ = synthgen.split(labels, 0.3, seed=2)
        for cls in range(4):
            n = (labels[query] == cls).sum()
            assert abs(n - 0.3 * 9) <= 1

    def test_singleton_class_rejected(self):
        with pytest.raises(DataError):
            synthgen.split(np.array([0, 0, 1]), 0.5, seed=0)

    def test_bad_fraction(self):
        with pytest.raises(DataError):
            synthgen.split(np.repeat(np.arange(2), 4), 1.0, seed=0)
