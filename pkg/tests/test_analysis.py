import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqhash import analysis as an
from aqhash.errors import DataError


def brute_force_mu(V):
    best, pair = -1.0, (0, 0)
    C = V.shape[1]
    for i in range(C):
        for j in range(C):
            if i == j:
                continue
            c = abs(V[:, i] @ V[:, j]) / (np.linalg.norm(V[:, i]) * np.linalg.norm(V[:, j]))
            if c > best:
                best, pair = c, (i, j)
    return best, pair


def unit_columns(rng, n, C):
    V = rng.normal(size=(n, C))
    return V / np.linalg.norm(V, axis=0)


class TestCoherence:
    def test_orthonormal_columns(self):
        mu, _ = an.coherence_mu(np.eye(5))
        assert mu == 0.0

    def test_identical_columns(self):
        V = np.ones((3, 2))
        mu, pair = an.coherence_mu(V)
        assert mu == pytest.approx(1.0, abs=1e-15)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        V = rng.normal(size=(8, 20))
        mu, _ = an.coherence_mu(V)
        expected, _ = brute_force_mu(V)
        assert abs(mu - expected) < 1e-14

    def test_zero_column_rejected(self):
        V = np.eye(3)
        V[:, 1] = 0.0
        with pytest.raises(DataError, match="column 1"):
            an.coherence_mu(V)

    @given(st.integers(0, 10_000))
    def test_invariant_to_positive_column_rescaling(self, seed):
        rng = np.random.default_rng(seed)
        V = rng.normal(size=(5, 8))
        scales = rng.uniform(0.1, 10.0, size=8)
        mu1, _ = an.coherence_mu(V)
        mu2, _ = an.coherence_mu(V * scales)
        assert abs(mu1 - mu2) < 1e-12


class TestWelchBound:
    def test_closed_form_values(self):
        assert an.welch_lower_bound(200, 12) == pytest.approx(0.2805832642446879, abs=1e-15)
        assert an.welch_lower_bound(200, 48) == pytest.approx(0.1261463349544709, abs=1e-15)

    def test_vacuous_when_c_le_n(self):
        assert an.welch_lower_bound(12, 12) == 0.0
        assert an.welch_lower_bound(5, 9) == 0.0

    def test_two_scalars(self):
        assert an.welch_lower_bound(2, 1) == 1.0

    def test_holds_on_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(4, 33))
            C = int(rng.integers(n + 1, 4 * n + 1))
            mu, _ = an.coherence_mu(unit_columns(rng, n, C))
            assert mu >= an.welch_lower_bound(C, n) - 1e-12


class TestVerifyBound:
    def test_identity_columns_vacuous(self):
        trace = an.verify_bound(np.eye(6))
        assert trace.gram_trace == pytest.approx(6.0)
        assert trace.bound == 0.0
        assert trace.all_hold

    def test_random_unit_columns(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(3, 16))
            C = int(rng.integers(n + 1, 3 * n))
            trace = an.verify_bound(unit_columns(rng, n, C))
            assert trace.all_hold, "\n".join(trace.lines())

    def test_equiangular_tight_frame_attains_bound(self):
        # three unit vectors in the plane at 120 degrees
        angles = np.array([0.0, 2 * math.pi / 3, 4 * math.pi / 3])
        V = np.vstack([np.cos(angles), np.sin(angles)])
        trace = an.verify_bound(V)
        assert trace.mu == pytest.approx(0.5, abs=1e-12)
        assert trace.bound == pytest.approx(0.5, abs=1e-15)
        assert trace.all_hold, "\n".join(trace.lines())


class TestCosineObjective:
    def test_orthogonal_columns_zero(self):
        value, grad = an.cosine_objective(np.eye(4))
        assert value == 0.0
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_two_identical_unit_columns(self):
        V = np.zeros((3, 2))
        V[0] = 1.0
        value, _ = an.cosine_objective(V)
        assert value == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_gradient_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        V = rng.normal(size=(4, 6))
        _, grad = an.cosine_objective(V)
        step = 1e-6
        fd = np.zeros_like(V)
        for idx in np.ndindex(V.shape):
            Vp, Vm = V.copy(), V.copy()
            Vp[idx] += step
            Vm[idx] -= step
            fd[idx] = (an.cosine_value(Vp) - an.cosine_value(Vm)) / (2 * step)
        denom = max(np.abs(grad).max(), np.abs(fd).max())
        assert np.abs(grad - fd).max() / denom < 1e-6


class TestMinimizeCoherence:
    def test_orthogonality_achievable_when_c_le_n(self):
        result = an.minimize_coherence(6, 8, steps=800, seed=0)
        assert result.final_mu < 0.05

    def test_objective_decreases(self):
        result = an.minimize_coherence(30, 8, steps=400, seed=1)
        assert result.final_value < result.trajectory[0][0]

    def test_bound_respected(self):
        result = an.minimize_coherence(30, 8, steps=400, seed=2)
        assert result.final_mu >= an.welch_lower_bound(30, 8) - 1e-9


class TestLandscape:
    def test_zero_extent_constant(self):
        rng = np.random.default_rng(3)
        V = unit_columns(rng, 4, 9)
        grid = an.landscape_grid(V, resolution=5, extent=0.0, seed=0)
        np.testing.assert_array_equal(grid.losses, np.full((5, 5), grid.center))

    def test_center_cell_exact(self):
        rng = np.random.default_rng(4)
        V = unit_columns(rng, 5, 12)
        grid = an.landscape_grid(V, resolution=7, extent=0.8, seed=1)
        assert grid.losses[3, 3] == an.cosine_value(V)

    def test_even_resolution_rejected(self):
        with pytest.raises(DataError):
            an.landscape_grid(np.eye(3), resolution=4)

    def test_csv_shape(self):
        grid = an.landscape_grid(np.eye(3), resolution=3, extent=0.5, seed=0)
        lines = grid.csv_lines()
        assert lines[0] == "a,b,loss"
        assert len(lines) == 1 + 9


class TestReports:
    def test_coherence_report_text(self):
        rng = np.random.default_rng(5)
        report = an.coherence_report(unit_columns(rng, 6, 10))
        text = report.as_text()
        assert "mu=" in text and "welch_bound=" in text
        assert report.gram_trace == pytest.approx(10.0, abs=1e-9)

    def test_representative_columns_one_per_class(self):
        labels = np.array([3, 0, 0, 1, 3, 1, 1])
        picks = an.representative_columns(labels, seed=0)
        assert sorted(labels[picks].tolist()) == [0, 1, 3]

    @settings(deadline=None)
    @given(st.integers(0, 1000))
    def test_representative_deterministic(self, seed):
        labels = np.repeat(np.arange(5), 4)
        np.testing.assert_array_equal(an.representative_columns(labels, seed),
                                      an.representative_columns(labels, seed))
