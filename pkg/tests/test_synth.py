"""Gaussian dictionaries and simulated sparse mixtures."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from protobasis.errors import EmptyGrid, MissingTruth, ValidationError
from protobasis.model import Observation, Truth
from protobasis.synth import (
    MixtureSimConfig,
    gaussian_dictionary,
    inclusive_range,
    simulate_mixtures,
    toy_cloud,
    true_target,
)


class TestGaussianDictionary:
    def test_benchmark_sizes(self):
        """Widths 0.2..8 step 0.05 on x in [-8, 8] step 0.05: N=157, p=321."""
        d = gaussian_dictionary(0.2, 8, 0.05, -8, 8, 0.05)
        assert (d.N, d.p) == (157, 321)
        np.testing.assert_allclose(d.params[[0, -1], 0], [0.2, 8.0])

    def test_default_grid_sizes(self, bench):
        assert (bench.N, bench.p) == (157, 321)
        np.testing.assert_allclose(bench.sample_grid[[0, -1]], [-6.0, 6.0])

    def test_single_point_density_at_mode(self):
        d = gaussian_dictionary(1, 1, 0.05, 0, 0, 1)
        assert (d.N, d.p) == (1, 1)
        np.testing.assert_allclose(d.curves[0, 0], 1 / math.sqrt(2 * math.pi), rtol=1e-14)

    def test_unit_mass(self):
        """Riemann mass of a sigma=0.5 curve on [-4, 4] matches the density integral."""
        d = gaussian_dictionary(0.5, 0.5, 1, -4, 4, 0.5)
        x = d.sample_grid
        oracle = integrate.quad(lambda t: stats.norm.pdf(t, scale=0.5), -np.inf, np.inf)[0]
        np.testing.assert_allclose(d.curves[:, 0].sum() * 0.5, oracle, atol=1e-6)
        np.testing.assert_allclose(d.curves[:, 0], stats.norm.pdf(x, scale=0.5), rtol=1e-13)

    def test_matches_scipy_pdf(self, bench):
        x, s = bench.sample_grid, bench.params[:, 0]
        np.testing.assert_allclose(bench.curves, stats.norm.pdf(x[:, None], scale=s[None, :]),
                                   rtol=1e-12, atol=1e-300)

    def test_empty_range(self):
        with pytest.raises(EmptyGrid):
            gaussian_dictionary(2.0, 1.0, 0.1, -1, 1, 0.1)

    def test_nonpositive_sigma(self):
        with pytest.raises(ValidationError):
            gaussian_dictionary(0.0, 1.0, 0.1, -1, 1, 0.1)

    @given(st.floats(-5, 5), st.floats(0, 10), st.floats(0.01, 2))
    def test_inclusive_range_endpoints(self, a, span, step):
        r = inclusive_range(a, a + span, step)
        assert r[0] == pytest.approx(a, abs=1e-9)
        assert r[-1] <= a + span + 1e-9
        assert a + span - r[-1] < step + 1e-9
        assert np.all(np.diff(r) > 0)


class TestSimulateMixtures:
    def test_benchmark_scale_shape(self, bench):
        obs = simulate_mixtures(bench, MixtureSimConfig(100, 5, 0.05, 3))
        assert len(obs) == 100
        for o in obs:
            g = o.truth.gamma
            assert g.size == 157
            assert np.count_nonzero(g) <= 5
            assert np.all(g >= 0)
            assert abs(g.sum() - 1) <= 1e-10
            np.testing.assert_allclose(o.truth.rho, g @ bench.params, rtol=1e-14)

    def test_noiseless_single_component(self, bench):
        for seed in range(5):
            (o,) = simulate_mixtures(bench, MixtureSimConfig(1, 1, 0.0, seed))
            i = int(np.flatnonzero(o.truth.gamma)[0])
            assert np.array_equal(o.y, bench.curves[:, i])
            assert o.truth.rho[0] == bench.params[i, 0]
            assert o.noise_scale is None

    def test_noise_sd_recovered(self, bench):
        obs = simulate_mixtures(bench, MixtureSimConfig(1000, 5, 0.05, 11))
        resid = np.concatenate([o.y - bench.curves @ o.truth.gamma for o in obs])
        sd = resid.std(ddof=1)
        assert 0.049 <= sd <= 0.051
        assert abs(resid.mean()) < 1e-3

    def test_support_size_law(self, bench):
        """Support sizes cover 1..5 with roughly equal frequency."""
        obs = simulate_mixtures(bench, MixtureSimConfig(2000, 5, 0.05, 2))
        sizes = np.array([np.count_nonzero(o.truth.gamma) for o in obs])
        counts = np.bincount(sizes, minlength=6)[1:]
        assert counts.sum() == 2000
        assert stats.chisquare(counts).pvalue > 1e-3

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_deterministic(self, seed, m):
        d = gaussian_dictionary(0.5, 3.0, 0.5, -3, 3, 0.5)
        cfg = MixtureSimConfig(4, m, 0.1, seed)
        a, b = simulate_mixtures(d, cfg), simulate_mixtures(d, cfg)
        for oa, ob in zip(a, b):
            assert oa.y.tobytes() == ob.y.tobytes()
            assert oa.truth.gamma.tobytes() == ob.truth.gamma.tobytes()
            assert np.count_nonzero(oa.truth.gamma) <= m

    def test_prefix_stable(self, bench):
        """Observation j does not depend on how many observations are drawn."""
        few = simulate_mixtures(bench, MixtureSimConfig(3, 5, 0.05, 9))
        many = simulate_mixtures(bench, MixtureSimConfig(10, 5, 0.05, 9))
        for a, b in zip(few, many):
            assert a.y.tobytes() == b.y.tobytes()

    def test_too_many_components(self):
        d = gaussian_dictionary(1, 2, 0.5, -1, 1, 0.5)
        with pytest.raises(ValidationError):
            simulate_mixtures(d, MixtureSimConfig(1, 4, 0.0, 0))

    @pytest.mark.parametrize("kw", [dict(n_observations=0), dict(max_components=0), dict(noise_sd=-1.0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValidationError):
            MixtureSimConfig(**kw)

    def test_echo_records_law(self):
        e = MixtureSimConfig().echo()
        assert "Dirichlet" in e["mixture_law"] and e["max_components"] == 5


class TestTrueTarget:
    def test_pure_component(self):
        o = Observation(np.zeros(2), truth=Truth(np.array([0.0, 1.0]), np.array([3.5])))
        assert true_target(o)[0] == 3.5

    def test_symmetric_mix(self):
        d = gaussian_dictionary(1, 3, 2, -1, 1, 1)
        g = np.array([0.5, 0.5])
        o = Observation(d.curves @ g, truth=Truth(g, g @ d.params))
        assert true_target(o)[0] == pytest.approx(2.0)

    def test_hand_computed(self):
        g = np.array([0.25, 0.75])
        rho = g @ np.array([[0.2], [8.0]])
        o = Observation(np.zeros(1), truth=Truth(g, rho))
        assert true_target(o)[0] == pytest.approx(6.05, abs=1e-12)

    def test_missing(self):
        with pytest.raises(MissingTruth):
            true_target(Observation(np.zeros(2)))


class TestToyCloud:
    def test_shape_and_hull(self, toy):
        from scipy.spatial import ConvexHull

        assert (toy.p, toy.N) == (2, 250)
        assert len(ConvexHull(toy.curves.T).vertices) >= 10

    def test_deterministic(self):
        assert toy_cloud(seed=3).curves.tobytes() == toy_cloud(seed=3).curves.tobytes()
