import numpy as np
import pytest

from physgen.darcy import DarcySource, residual_darcy, source_function
from physgen.grf import (CovarianceSpec, GenerativeParams, KLEBasis,
                         covariance_matrix, generate_darcy_dataset,
                         kle_decompose, sample_permeability)
from physgen.grids import GridSpec, ScalarField


class TestCovarianceMatrix:
    def test_unit_diagonal(self):
        C = covariance_matrix(GridSpec(5), CovarianceSpec(length=0.25))
        assert np.array_equal(np.diag(C), np.ones(25))

    def test_symmetric_bitwise(self):
        C = covariance_matrix(GridSpec(6), CovarianceSpec(length=0.4))
        assert np.array_equal(C, C.T)

    def test_neighbor_entry_at_distance_length(self):
        g = GridSpec(5)
        C = covariance_matrix(g, CovarianceSpec(length=g.dx))
        # nodes (0,0) and (1,0) sit exactly one correlation length apart
        assert C[0, 5] == pytest.approx(np.exp(-1.0), abs=1e-12)


class TestKLEDecompose:
    def setup_method(self):
        self.grid = GridSpec(6)
        self.C = covariance_matrix(self.grid, CovarianceSpec())

    def test_eigenvalues_nonnegative_descending(self):
        basis = kle_decompose(self.C, 12, grid=self.grid)
        assert np.all(basis.lambdas >= 0.0)
        assert np.all(np.diff(basis.lambdas) <= 1e-12)

    def test_partial_eigensum_below_trace(self):
        basis = kle_decompose(self.C, 12, grid=self.grid)
        assert np.sum(basis.lambdas) <= np.trace(self.C) * (1 + 1e-6)

    def test_full_rank_reconstruction(self):
        m = self.C.shape[0]
        basis = kle_decompose(self.C, m, grid=self.grid)
        recon = (basis.phis.T * basis.lambdas) @ basis.phis
        rel = np.linalg.norm(recon - self.C) / np.linalg.norm(self.C)
        assert rel < 1e-8

    def test_orthonormal_eigenvectors(self):
        basis = kle_decompose(self.C, 10, grid=self.grid)
        gram = basis.phis @ basis.phis.T
        assert np.max(np.abs(gram - np.eye(10))) < 1e-8

    def test_truncation_monotonicity(self):
        b1 = kle_decompose(self.C, 5, grid=self.grid)
        b2 = kle_decompose(self.C, 10, grid=self.grid)
        assert np.allclose(b1.lambdas, b2.lambdas[:5], atol=1e-8)
        assert np.max(np.abs(b1.phis - b2.phis[:5])) < 1e-8

    def test_sign_convention(self):
        basis = kle_decompose(self.C, 8, grid=self.grid)
        for k in range(8):
            assert basis.phis[k, np.argmax(np.abs(basis.phis[k]))] > 0

    def test_s_out_of_range(self):
        with pytest.raises(ValueError):
            kle_decompose(self.C, 0, grid=self.grid)
        with pytest.raises(ValueError):
            kle_decompose(self.C, 37, grid=self.grid)

    def test_asymmetric_rejected(self):
        bad = self.C.copy()
        bad[0, 1] += 1.0
        with pytest.raises(ValueError, match="symmetric"):
            kle_decompose(bad, 4, grid=self.grid)

    def test_indefinite_rejected(self):
        bad = np.diag([1.0, 0.5, -0.2, 0.1])
        with pytest.raises(ValueError, match="eigenvalue"):
            kle_decompose(bad, 2, grid=GridSpec(3))


class TestSamplePermeability:
    def setup_method(self):
        grid = GridSpec(5)
        self.basis = kle_decompose(
            covariance_matrix(grid, CovarianceSpec(mean=0.3)), 8,
            mean=0.3, grid=grid)

    def test_zero_theta_gives_exp_mean(self):
        K = sample_permeability(self.basis, GenerativeParams(np.zeros(8)))
        assert np.allclose(K.values, np.exp(0.3), atol=1e-14)

    def test_log_linear_in_theta(self):
        theta = np.random.default_rng(0).standard_normal(8)
        K1 = sample_permeability(self.basis, GenerativeParams(theta))
        K2 = sample_permeability(self.basis, GenerativeParams(2.0 * theta))
        lhs = np.log(K2.values) - 0.3
        rhs = 2.0 * (np.log(K1.values) - 0.3)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_strictly_positive(self):
        theta = np.random.default_rng(1).standard_normal(8) * 3
        K = sample_permeability(self.basis, GenerativeParams(theta))
        assert np.all(K.values > 0)

    def test_wrong_theta_length(self):
        with pytest.raises(ValueError):
            sample_permeability(self.basis, GenerativeParams(np.zeros(5)))

    def test_monte_carlo_covariance(self):
        # empirical covariance of log K must match the truncated expansion
        grid = GridSpec(8)
        s, n_draws = 16, 20000
        basis = kle_decompose(covariance_matrix(grid, CovarianceSpec()), s,
                              grid=grid)
        rng = np.random.default_rng(7)
        thetas = rng.standard_normal((n_draws, s))
        logk = (np.sqrt(basis.lambdas) * thetas) @ basis.phis
        emp = logk.T @ logk / n_draws
        target = (basis.phis.T * basis.lambdas) @ basis.phis
        se = np.sqrt((np.outer(np.diag(target), np.diag(target))
                      + target**2) / n_draws)
        assert np.all(np.abs(emp - target) <= 5.0 * se + 1e-12)


class TestGenerateDataset:
    def test_same_seed_bit_identical(self):
        a = generate_darcy_dataset(5, 10, 6, seed=3)
        b = generate_darcy_dataset(5, 10, 6, seed=3)
        assert np.array_equal(a.pressure, b.pressure)
        assert np.array_equal(a.permeability, b.permeability)
        assert np.array_equal(a.thetas, b.thetas)

    def test_different_seed_differs(self):
        a = generate_darcy_dataset(3, 8, 4, seed=1)
        b = generate_darcy_dataset(3, 8, 4, seed=2)
        assert not np.array_equal(a.pressure, b.pressure)

    def test_permeability_positive(self):
        ds = generate_darcy_dataset(4, 8, 4, seed=5)
        assert np.all(ds.permeability > 0)

    def test_residual_below_recorded_bound(self):
        ds = generate_darcy_dataset(6, 12, 8, seed=9)
        f = source_function(ds.source, ds.grid)
        per_sample = []
        for k in range(ds.count):
            r = residual_darcy(ScalarField(ds.grid, ds.permeability[k]),
                               ScalarField(ds.grid, ds.pressure[k]), f).values
            per_sample.append(np.mean(r * r))
        bound = max(per_sample) * (1 + 1e-9)
        assert all(v <= bound for v in per_sample)
