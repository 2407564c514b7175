"""Nonnegative and simplex-constrained least squares, checked against independent oracles."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.optimize import nnls as scipy_nnls

from protobasis.errors import DimensionMismatch, IterationLimit, MissingNoiseScale, ValidationError
from protobasis.eval import grid_basis
from protobasis.mixfit import (
    FitConfig,
    chi_square,
    kkt_violation,
    nnls,
    simplex_fit,
    simplex_lstsq,
)
from protobasis.model import Observation, PrototypeBasis
from protobasis.synth import gaussian_dictionary


def grid_nnls(A, y, hi=3.0, step=1e-3):
    """Brute-force minimizer of ||A w - y|| over the grid [0, hi]^2."""
    g = np.arange(0.0, hi + step / 2, step)
    G, b, c = A.T @ A, A.T @ y, y @ y
    W0, W1 = np.meshgrid(g, g, indexing="ij")
    f = G[0, 0] * W0 ** 2 + 2 * G[0, 1] * W0 * W1 + G[1, 1] * W1 ** 2 - 2 * (b[0] * W0 + b[1] * W1) + c
    i, j = np.unravel_index(np.argmin(f), f.shape)
    return np.array([g[i], g[j]])


def grid_instances(n=20, seed=0, max_cond=8.0):
    """Random 5x2 problems whose minimizer lies inside the search box.

    The grid oracle resolves a minimizer to about ``7e-4 * sqrt(cond)``;
    the conditioning cap keeps that inside the 2e-3 comparison tolerance.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        A = rng.standard_normal((5, 2))
        if np.linalg.cond(A.T @ A) > max_cond:
            continue
        w_true = rng.uniform(-0.5, 2.5, 2)
        y = A @ w_true + 0.3 * rng.standard_normal(5)
        if scipy_nnls(A, y)[0].max() > 2.9:
            continue
        out.append((A, y))
    return out


def support_oracle(A, b):
    """Exact simplex least squares by enumerating every support (small K only)."""
    K = A.shape[1]
    best, best_w = np.inf, None
    for r in range(1, K + 1):
        for S in itertools.combinations(range(K), r):
            S = list(S)
            As = A[:, S]
            # KKT system of min ||As v - b|| s.t. sum v = 1
            M = np.zeros((r + 1, r + 1))
            M[:r, :r] = As.T @ As
            M[:r, r] = M[r, :r] = 1.0
            rhs = np.concatenate([As.T @ b, [1.0]])
            v = np.linalg.lstsq(M, rhs, rcond=None)[0][:r]
            if np.any(v < -1e-12):
                continue
            w = np.zeros(K)
            w[S] = np.maximum(v, 0)
            w /= w.sum()
            f = np.sum((A @ w - b) ** 2)
            if f < best:
                best, best_w = f, w
    return best_w, best


def _basis(K=5):
    d = gaussian_dictionary(0.2, 8.0, 0.05)
    return grid_basis(d, K, "uniform_sigma")


def _objective(basis, y, fit):
    return float(np.sum((y - fit.scale * basis.prototypes @ fit.beta) ** 2))


class TestNNLSExamples:
    def test_identity(self):
        np.testing.assert_allclose(nnls(np.eye(2), np.array([1.0, 2.0])), [1.0, 2.0], atol=1e-15)

    def test_active_constraint(self):
        c = np.array([[1.0], [2.0], [-0.5]])
        assert nnls(c, -c[:, 0])[0] == 0.0

    def test_zero_rhs(self):
        assert np.all(nnls(np.ones((3, 2)), np.zeros(3)) == 0)

    def test_grid_oracle(self):
        """20 random 5x2 instances agree with a 1e-3 grid search within 2e-3."""
        for A, y in grid_instances():
            w = nnls(A, y)
            np.testing.assert_allclose(w, grid_nnls(A, y), atol=2e-3, rtol=0)

    def test_iteration_limit(self):
        rng = np.random.default_rng(0)
        A = rng.random((10, 6))
        y = A @ np.ones(6)
        with pytest.raises(IterationLimit):
            nnls(A, y, max_iter=2)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            nnls(np.eye(3), np.ones(2))


class TestNNLSProperties:
    """KKT conditions and agreement with scipy on random problems."""

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_kkt_and_scipy(self, p, K, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((p, K))
        y = rng.standard_normal(p)
        w = nnls(A, y)
        assert np.all(w >= 0)
        assert kkt_violation(A, y, w) <= 1.0
        ref = scipy_nnls(A, y)[0]
        f, f_ref = np.sum((A @ w - y) ** 2), np.sum((A @ ref - y) ** 2)
        assert f <= f_ref + 1e-9 * max(1.0, f_ref)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_kkt_on_gaussian_prototypes(self, seed):
        """Near-collinear nonnegative columns, the regime of the benchmark."""
        b = _basis(15)
        rng = np.random.default_rng(seed)
        y = b.prototypes @ rng.dirichlet(np.ones(15)) + 0.05 * rng.standard_normal(b.p)
        w = nnls(b.prototypes, y)
        assert kkt_violation(b.prototypes, y, w) <= 1.0


class TestSimplexLstsq:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_support_enumeration_oracle(self, p, K, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((p, K))
        b = rng.standard_normal(p)
        w = simplex_lstsq(A, b)
        assert np.all(w >= 0)
        assert abs(w.sum() - 1) <= 1e-10
        _, f_ref = support_oracle(A, b)
        f = np.sum((A @ w - b) ** 2)
        assert f <= f_ref + 1e-9 * max(1.0, f_ref)

    def test_vertex_recovered(self):
        A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(simplex_lstsq(A, np.array([1.0, 0.0])), [0, 1, 0], atol=1e-12)

    def test_interior_point(self):
        A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        w = simplex_lstsq(A, np.array([0.2, 0.3]))
        np.testing.assert_allclose(w, [0.5, 0.2, 0.3], atol=1e-12)


class TestSimplexFit:
    def test_exact_prototype(self):
        b = _basis()
        for k in range(b.K):
            fit = simplex_fit(b, Observation(b.prototypes[:, k].copy()))
            np.testing.assert_allclose(fit.beta, np.eye(b.K)[k], atol=1e-12)
            assert fit.scale == pytest.approx(1.0, rel=1e-12)
            assert fit.residual_ss <= 1e-16 * np.sum(b.prototypes[:, k] ** 2)

    def test_scale_identified(self):
        b = _basis()
        fit = simplex_fit(b, Observation(3.0 * b.prototypes[:, 2]))
        np.testing.assert_allclose(fit.beta, np.eye(b.K)[2], atol=1e-12)
        assert fit.scale == pytest.approx(3.0, rel=1e-12)

    def test_two_component_mix_against_grid(self):
        """beta matches a 1e-3 grid over the 2-simplex with the optimal scale per point."""
        d = gaussian_dictionary(0.2, 8.0, 0.05)
        b = PrototypeBasis.from_alpha(d, np.eye(d.N)[:, [4, 120]], "pair")
        rng = np.random.default_rng(7)
        psi = b.prototypes
        y = psi @ np.array([0.4, 0.6]) + 0.01 * rng.standard_normal(d.p)
        fit = simplex_fit(b, Observation(y))
        assert abs(fit.beta[0] - 0.4) <= 0.05 and abs(fit.beta[1] - 0.6) <= 0.05

        t = np.arange(0.0, 1.0 + 5e-4, 1e-3)
        V = np.outer(psi[:, 0], t) + np.outer(psi[:, 1], 1 - t)
        M = np.maximum((V.T @ y) / np.sum(V * V, axis=0), 0)
        f = np.sum((y[:, None] - V * M) ** 2, axis=0)
        assert abs(fit.beta[0] - t[np.argmin(f)]) <= 1e-3
        assert fit.residual_ss <= f.min() + 1e-12

    def test_zero_fit(self):
        b = _basis(3)
        fit = simplex_fit(b, Observation(-b.prototypes[:, 0]))
        assert fit.zero_fit and fit.scale == 0.0
        np.testing.assert_allclose(fit.beta, np.full(3, 1 / 3))
        np.testing.assert_allclose(fit.residual_ss, np.sum(b.prototypes[:, 0] ** 2), rtol=1e-12)

    def test_constant_noise_weights_cancel(self):
        b = _basis(10)
        rng = np.random.default_rng(1)
        y = b.prototypes @ rng.dirichlet(np.ones(10)) + 0.05 * rng.standard_normal(b.p)
        plain = simplex_fit(b, Observation(y))
        weighted = simplex_fit(b, Observation(y, np.full(b.p, 0.05)), FitConfig(weight_by_noise=True))
        assert weighted.beta.tobytes() == plain.beta.tobytes()
        assert weighted.scale == plain.scale
        assert weighted.chi_square == pytest.approx(plain.residual_ss / 0.05 ** 2, rel=1e-12)

    def test_weighted_fit_downweights_noisy_points(self):
        b = _basis(5)
        y = b.prototypes[:, 1].copy()
        y[:20] += 5.0
        ns = np.ones(b.p)
        ns[:20] = 1e3
        fit = simplex_fit(b, Observation(y, ns), FitConfig(weight_by_noise=True))
        assert fit.beta[1] > 0.99

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            simplex_fit(_basis(), Observation(np.ones(5)))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            FitConfig(nnls_tol=0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5))
    def test_invariants(self, seed, sd):
        """Simplex beta, residual identity, vertex dominance and permutation invariance."""
        b = _basis(6)
        rng = np.random.default_rng(seed)
        y = rng.uniform(0.1, 5) * b.prototypes @ rng.dirichlet(np.ones(6)) + sd * rng.standard_normal(b.p)
        fit = simplex_fit(b, Observation(y))
        assert np.all(fit.beta >= 0) and abs(fit.beta.sum() - 1) <= 1e-10
        assert fit.scale >= 0
        # absolute floor covers exact fits, where the residual is pure roundoff
        np.testing.assert_allclose(fit.residual_ss, _objective(b, y, fit), rtol=1e-8,
                                   atol=1e-24 * float(y @ y))
        psi = b.prototypes
        for k in range(b.K):
            m = max(psi[:, k] @ y / (psi[:, k] @ psi[:, k]), 0.0)
            assert fit.residual_ss <= np.sum((y - m * psi[:, k]) ** 2) * (1 + 1e-10)
        perm = rng.permutation(b.K)
        d = gaussian_dictionary(0.2, 8.0, 0.05)
        pb = PrototypeBasis.from_alpha(d, b.alpha[:, perm], "perm")
        pfit = simplex_fit(pb, Observation(y))
        np.testing.assert_allclose(pfit.residual_ss, fit.residual_ss, rtol=1e-10, atol=1e-14)


class TestChiSquare:
    def test_perfect_model(self):
        o = Observation(np.array([1.0, 2.0, 3.0]), np.ones(3))
        assert chi_square(o, o.y) == 0.0

    @given(hnp.arrays(float, 7, elements=st.floats(0.01, 100)))
    def test_unit_residuals(self, ns):
        o = Observation(np.zeros(7), ns)
        assert chi_square(o, -ns) == pytest.approx(7.0, rel=1e-12)

    def test_hand_computed(self):
        o = Observation(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        assert chi_square(o, np.zeros(2)) == pytest.approx(2.0)

    def test_missing_noise(self):
        with pytest.raises(MissingNoiseScale):
            chi_square(Observation(np.zeros(2)), np.zeros(2))
