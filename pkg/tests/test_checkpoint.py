import numpy as np
import pytest

from aqhash import checkpoint as ck
from aqhash import synthgen
from aqhash.errors import CheckpointError
from aqhash.extractor import LevelSpec
from aqhash.model import HashModel, ModelConfig


def make_model(seed=0, branches=2):
    cfg = ModelConfig(levels=(LevelSpec(3, 2, 2), LevelSpec(2, 4, 4)),
                      d=8, k=4, heads=2, branches=branches)
    model = HashModel.init(cfg, seed)
    model.snap_to_float32()
    return model


def random_pyramid(seed, cfg):
    rng = np.random.default_rng(seed)
    from aqhash.extractor import FeaturePyramid
    return FeaturePyramid([rng.normal(size=(s.channels, s.width, s.height))
                           for s in cfg.levels])


class TestRoundTrip:
    def test_forward_outputs_bit_identical(self, tmp_path):
        model = make_model(seed=1)
        meta = ck.CheckpointMeta(beta=1.0, gamma=2.5, seed=1, iterations=7)
        path = tmp_path / "m.aqck"
        ck.save_checkpoint(path, model, meta)
        loaded, got_meta = ck.load_checkpoint(path)
        assert got_meta == meta
        for s in range(5):
            pyr = random_pyramid(s, model.config)
            np.testing.assert_array_equal(model.infer_code(pyr), loaded.infer_code(pyr))
            np.testing.assert_array_equal(model.infer_logits(pyr).data,
                                          loaded.infer_logits(pyr).data)

    def test_save_load_save_identical_bytes(self, tmp_path):
        model = make_model(seed=2)
        meta = ck.CheckpointMeta(beta=1.0, gamma=200.0, seed=2, iterations=0)
        p1, p2 = tmp_path / "a.aqck", tmp_path / "b.aqck"
        ck.save_checkpoint(p1, model, meta)
        loaded, meta2 = ck.load_checkpoint(p1)
        ck.save_checkpoint(p2, loaded, meta2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_config_round_trip(self, tmp_path):
        model = make_model(branches=4)
        path = tmp_path / "m.aqck"
        ck.save_checkpoint(path, model, ck.CheckpointMeta(0.5, 7.0, 9, 3))
        loaded, _ = ck.load_checkpoint(path)
        assert loaded.config == model.config


class TestErrors:
    def write_valid(self, tmp_path):
        model = make_model()
        path = tmp_path / "m.aqck"
        ck.save_checkpoint(path, model, ck.CheckpointMeta(1.0, 1.0, 0, 0))
        return path

    def test_corrupted_magic(self, tmp_path):
        path = self.write_valid(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            ck.load_checkpoint(path)

    def test_unknown_version(self, tmp_path):
        path = self.write_valid(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            ck.load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = self.write_valid(tmp_path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError, match="truncated"):
            ck.load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = self.write_valid(tmp_path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CheckpointError, match="trailing"):
            ck.load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            ck.load_checkpoint(tmp_path / "nope.aqck")


class TestTrainedRoundTrip:
    def test_trained_model_codes_survive_round_trip(self, tmp_path):
        from aqhash import training as tr
        from aqhash import retrieval as rt
        spec = synthgen.SynthSpec(classes=3, attributes=5, images_per_class=3,
                                  noise=0.05, seed=0,
                                  levels=(LevelSpec(3, 2, 2), LevelSpec(2, 4, 4)))
        data = synthgen.build(spec)
        cfg = tr.TrainConfig(k=4, d=8, heads=2, branches=2, gamma=1.0,
                             learning_rate=0.01, batch_size=4, samples_per_epoch=9,
                             outer_iterations=1, inner_epochs=1, seed=5)
        model, _, _ = tr.train(data, np.arange(data.count), cfg)
        path = tmp_path / "t.aqck"
        ck.save_checkpoint(path, model, ck.CheckpointMeta(cfg.beta, cfg.gamma,
                                                          cfg.seed, cfg.outer_iterations))
        loaded, _ = ck.load_checkpoint(path)
        before = rt.encode_database(model, data)
        after = rt.encode_database(loaded, data)
        np.testing.assert_array_equal(before.words, after.words)
