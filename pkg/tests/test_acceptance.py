"""Acceptance suite.

Each test prints one `[ACCEPTANCE n] PASS/FAIL` line (run with `pytest -s
tests/test_acceptance.py` to see them live) and asserts the criterion at
its stated tolerance.
"""

import time

import numpy as np
import pytest

from aqhash import analysis as an
from aqhash import checkpoint as ck
from aqhash import retrieval as rt
from aqhash import synthgen
from aqhash import training as tr
from aqhash.cli import main as cli_main
from aqhash.model import HashModel, ModelConfig


def report(num, desc, ok, extra=""):
    status = "PASS" if ok else "FAIL"
    print(f"\n[ACCEPTANCE {num}] {status} - {desc}{' (' + extra + ')' if extra else ''}")
    assert ok, f"criterion {num} failed: {desc} {extra}"


def evaluate_map(model, data, query_idx, gallery_idx):
    gallery = rt.encode_database(model, data, gallery_idx)
    queries = rt.encode_database(model, data, query_idx)
    rankings = rt.rank_all(queries, gallery)
    return rt.mean_average_precision(rankings, data.labels[query_idx],
                                     data.labels[gallery_idx])


class TestAcceptance:
    def test_01_gradient_integrity(self):
        # full pipeline (pyramid -> decoder with N branches -> loss), central
        # differences at step 1e-6, max relative error < 1e-5, under 2 min
        t0 = time.time()
        worst = 0.0
        for branches in (1, 2, 4):
            cfg = tr.TrainConfig(k=3, d=8, heads=2, branches=branches,
                                 beta=1.0, gamma=0.7, seed=branches)
            rep = tr.pipeline_grad_check(cfg, step=1e-6, tolerance=1e-5)
            worst = max(worst, rep.max_error)
        elapsed = time.time() - t0
        report(1, "gradient integrity over N in {1,2,4}",
               worst < 1e-5 and elapsed < 120,
               f"max rel err {worst:.2e}, {elapsed:.0f}s")

    def test_02_welch_bound_property(self, capsys):
        t0 = time.time()
        rng = np.random.default_rng(202)
        ok = True
        for _ in range(1000):
            n = int(rng.integers(4, 33))
            C = int(rng.integers(n + 1, 4 * n + 1))
            V = rng.normal(size=(n, C))
            V /= np.linalg.norm(V, axis=0)
            mu, _ = an.coherence_mu(V)
            if mu < an.welch_lower_bound(C, n) - 1e-12:
                ok = False
                break
            trace = an.verify_bound(V)
            if not trace.all_hold:
                ok = False
                break
        printed = {}
        for dims, expect in ((12, 0.28058), (48, 0.12615)):
            assert cli_main(["bound", "--classes", "200", "--dims", str(dims)]) == 0
            printed[dims] = float(capsys.readouterr().out.strip())
            ok = ok and abs(printed[dims] - expect) <= 1e-5
        elapsed = time.time() - t0
        report(2, "Welch bound + proof chain on 1000 random matrices; "
                  "bound CLI prints 0.28058/0.12615",
               ok and elapsed < 60,
               f"bound(200,12)={printed[12]:.6f}, bound(200,48)={printed[48]:.6f}, "
               f"{elapsed:.0f}s")

    def test_03_coherence_minimization_trend(self):
        t0 = time.time()
        mus = {}
        for n in (12, 48):
            mus[n] = an.minimize_coherence(200, n, steps=2000, seed=3).final_mu
        elapsed = time.time() - t0
        ok = (mus[48] < mus[12]
              and mus[12] >= 0.2805
              and mus[12] >= an.welch_lower_bound(200, 12) - 1e-9
              and elapsed < 300)
        report(3, "coherence minimization: mu(n=48) < mu(n=12), mu(12) >= 0.2805",
               ok, f"mu(12)={mus[12]:.4f}, mu(48)={mus[48]:.4f}, {elapsed:.0f}s")

    def test_04_landscape_trend(self):
        t0 = time.time()
        minima = {}
        for n in (12, 48):
            rng = np.random.default_rng(4)  # matched seed across n
            V = rng.normal(size=(n, 200))
            V /= np.linalg.norm(V, axis=0)
            grid = an.landscape_grid(V, resolution=21, extent=1.0, seed=44)
            minima[n] = float(grid.losses.min())
        elapsed = time.time() - t0
        ok = minima[48] < minima[12] and elapsed < 180
        report(4, "landscape: grid minimum lower for n=48 than n=12 at C=200",
               ok, f"min(12)={minima[12]:.1f}, min(48)={minima[48]:.1f}, {elapsed:.0f}s")

    def test_05_retrieval_engine_oracles(self):
        rng = np.random.default_rng(5)
        ok = True
        for k in (12, 63, 64, 65, 128):
            codes = rng.choice(np.array([-1, 1], dtype=np.int8), size=(1000, k))
            packed = rt.pack(codes)
            queries = codes[:20].astype(np.float64)
            dist = rt.hamming(rt.pack(codes[:20]), packed)
            dots = queries @ codes.T.astype(np.float64)
            # dot = k - 2H, exactly
            ok = ok and np.array_equal(dots, k - 2 * dist)
            order = rt.rank_all(rt.pack(codes[:20]), packed)
            oracle = np.argsort(-dots, axis=1, kind="stable")
            ok = ok and np.array_equal(order, oracle)
        ap = rt.average_precision([1, 0, 1])
        ok = ok and abs(ap - 5.0 / 6.0) < 1e-12
        report(5, "packed Hamming ranking == float inner-product ranking; "
                  "dot = k - 2H; AP fixture 5/6", ok)

    def test_06_z_update_contract(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(100):
            m = int(rng.integers(3, 10))
            g = int(rng.integers(m, 25))
            K = int(rng.integers(2, 16))
            V = np.tanh(rng.normal(size=(m, K)))
            Z = rng.choice([-1.0, 1.0], size=(g, K))
            omega = np.sort(rng.choice(g, size=m, replace=False))
            S = rng.integers(0, 2, size=(m, g)).astype(float)
            beta, gamma = rng.uniform(0.05, 3.0), rng.uniform(0.05, 10.0)
            before = tr.eq6_objective(V, Z, S, beta, gamma, omega)
            Z2 = tr.update_database_codes(Z, V, S, beta, gamma, omega)
            after = tr.eq6_objective(V, Z2, S, beta, gamma, omega)
            worst = max(worst, after - before)
        report(6, "database-code update never increases the objective "
                  "(100 random instances)", worst <= 1e-12,
               f"worst increase {worst:.2e}")

    def test_08_inference_invariance(self):
        base_cfg = ModelConfig(levels=synthgen.default_spec().levels, d=64, k=12,
                               heads=8, branches=1)
        base = HashModel.init(base_cfg, seed=8)
        wide = HashModel(ModelConfig(base_cfg.levels, 64, 12, 8, branches=8),
                         base.extractor, base.decoder, base.queries)
        rng = np.random.default_rng(8)
        ok = True
        for _ in range(5):
            pyr = synthgen.FeaturePyramid(
                [rng.normal(size=(s.channels, s.width, s.height))
                 for s in base_cfg.levels])
            ok = ok and np.array_equal(base.infer_code(pyr), wide.infer_code(pyr))
        report(8, "inference codes bit-identical for BranchConfig N=1 vs N=8 "
                  "with shared (Q, Theta)", ok)

    def test_09_determinism_and_persistence(self, tmp_path):
        spec = synthgen.SynthSpec(classes=4, attributes=6, images_per_class=4,
                                  noise=0.05, seed=9,
                                  levels=synthgen.default_spec().levels)
        data = synthgen.build(spec)
        cfg = tr.TrainConfig(k=4, d=16, heads=2, branches=2, gamma=0.5,
                             learning_rate=0.01, batch_size=8, samples_per_epoch=8,
                             outer_iterations=1, inner_epochs=1, seed=9)
        paths = []
        for run in range(2):
            model, _, _ = tr.train(data, np.arange(data.count), cfg)
            path = tmp_path / f"run{run}.aqck"
            ck.save_checkpoint(path, model, ck.CheckpointMeta(cfg.beta, cfg.gamma,
                                                              cfg.seed, 1))
            paths.append(path)
        byte_identical = paths[0].read_bytes() == paths[1].read_bytes()

        model, _ = ck.load_checkpoint(paths[0])
        codes_before = rt.encode_database(model, data)
        reloaded, _ = ck.load_checkpoint(paths[0])
        codes_after = rt.encode_database(reloaded, data)
        codes_match = np.array_equal(codes_before.words, codes_after.words)

        codes_path = tmp_path / "codes.aqhc"
        rt.save_codes(codes_path, codes_before)
        round_trip = rt.load_codes(codes_path)
        aqhc_exact = (round_trip.k == codes_before.k
                      and np.array_equal(round_trip.words, codes_before.words))
        report(9, "same seed -> byte-identical checkpoints; save/load -> "
                  "bit-identical codes; AQHC round trip exact",
               byte_identical and codes_match and aqhc_exact)
