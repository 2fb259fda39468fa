import numpy as np
import pytest

from physgen.diffusion import (VPSchedule, beta, drift_diffusion, dsm_loss,
                               gaussian_score_oracle, kernel_coeffs, perturb)

SCHED = VPSchedule()


class TestBeta:
    def test_endpoints(self):
        assert beta(0.0, SCHED) == pytest.approx(1e-4, abs=1e-18)
        assert beta(1.0, SCHED) == pytest.approx(10.0, abs=1e-12)

    def test_midpoint(self):
        assert beta(0.5, SCHED) == pytest.approx(5.00005, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            beta(-0.1, SCHED)
        with pytest.raises(ValueError):
            beta(1.5, SCHED)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            VPSchedule(beta_min=2.0, beta_max=1.0)


class TestDriftDiffusion:
    def test_zero_state_zero_drift(self):
        f, _ = drift_diffusion(np.zeros(4), 0.3, SCHED)
        assert np.array_equal(f, np.zeros(4))

    def test_diffusion_at_final_time(self):
        _, g = drift_diffusion(np.ones(2), 1.0, SCHED)
        assert g == pytest.approx(np.sqrt(10.0), abs=1e-12)

    def test_drift_linear(self):
        y = np.array([1.0, -2.0, 0.5])
        f1, _ = drift_diffusion(y, 0.4, SCHED)
        f2, _ = drift_diffusion(2 * y, 0.4, SCHED)
        assert np.allclose(f2, 2 * f1, atol=1e-15)


class TestKernelCoeffs:
    def test_identity_at_zero(self):
        assert kernel_coeffs(0.0, SCHED) == (1.0, 0.0)

    def test_closed_form_at_one(self):
        alpha, sigma2 = kernel_coeffs(1.0, SCHED)
        # independent evaluation of the two exponentials
        expo = -0.25 * (10.0 - 1e-4) - 0.5 * 1e-4
        assert alpha == pytest.approx(np.exp(expo), abs=1e-15)
        assert sigma2 == pytest.approx(1.0 - np.exp(2 * expo), abs=1e-15)
        assert alpha == pytest.approx(0.08208, abs=1e-5)
        assert sigma2 == pytest.approx(0.99326, abs=1e-5)

    def test_monotone_on_grid(self):
        ts = np.linspace(0.0, 1.0, 1000)
        alphas, sigmas = zip(*(kernel_coeffs(float(t), SCHED) for t in ts))
        assert np.all(np.diff(alphas) < 0)
        assert np.all(np.diff(sigmas) > 0)

    def test_variance_preserving(self):
        for t in np.linspace(0.0, 1.0, 1000):
            alpha, sigma2 = kernel_coeffs(float(t), SCHED)
            assert alpha**2 + sigma2 <= 1.0 + 1e-12
            assert alpha**2 + sigma2 == pytest.approx(1.0, abs=1e-12)


class TestPerturb:
    def test_identity_at_zero(self):
        y0 = np.random.default_rng(0).standard_normal(6)
        z = np.random.default_rng(1).standard_normal(6)
        assert np.array_equal(perturb(y0, 0.0, z, SCHED), y0)

    def test_zero_noise_gives_mean(self):
        y0 = np.ones(4)
        alpha, _ = kernel_coeffs(0.3, SCHED)
        assert np.allclose(perturb(y0, 0.3, np.zeros(4), SCHED), alpha, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            perturb(np.zeros(3), 0.5, np.zeros(4), SCHED)

    @pytest.mark.parametrize("t", [0.25, 0.5, 0.75])
    def test_monte_carlo_moments(self, t):
        n = 100000
        rng = np.random.default_rng(42)
        draws = perturb(np.full(n, 2.0), t, rng.standard_normal(n), SCHED)
        alpha, sigma2 = kernel_coeffs(t, SCHED)
        se_mean = np.sqrt(sigma2 / n)
        se_var = sigma2 * np.sqrt(2.0 / (n - 1))
        assert abs(draws.mean() - alpha * 2.0) <= 5 * se_mean
        assert abs(draws.var() - sigma2) <= 5 * se_var

    def test_two_stage_composition_moments(self):
        # noising to t=0.3 then from 0.3 to 0.7 must match direct t=0.7
        n = 100000
        rng = np.random.default_rng(3)
        y0 = 1.5
        a3, s3 = kernel_coeffs(0.3, SCHED)
        a7, s7 = kernel_coeffs(0.7, SCHED)
        a_step = a7 / a3
        s_step = 1.0 - a_step**2
        y1 = a3 * y0 + np.sqrt(s3) * rng.standard_normal(n)
        y2 = a_step * y1 + np.sqrt(s_step) * rng.standard_normal(n)
        se_mean = np.sqrt(s7 / n)
        se_var = s7 * np.sqrt(2.0 / (n - 1))
        assert abs(y2.mean() - a7 * y0) <= 5 * se_mean
        assert abs(y2.var() - s7) <= 5 * se_var


class TestDSMLoss:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.y0 = rng.standard_normal((8, 5))
        self.t = rng.uniform(0.1, 1.0, 8)
        self.z = rng.standard_normal((8, 5))

    def test_exact_conditional_score_zero_loss(self):
        y0_batch, t_batch, z_batch = self.y0, self.t, self.z
        lookup = {}
        for y0, t, z in zip(y0_batch, t_batch, z_batch):
            alpha, sigma2 = kernel_coeffs(float(t), SCHED)
            yt = alpha * y0 + np.sqrt(sigma2) * z
            lookup[yt.tobytes()] = -(yt - alpha * y0) / sigma2

        def exact_score(y, t):
            return lookup[y.tobytes()]

        assert dsm_loss(exact_score, y0_batch, t_batch, z_batch, SCHED) < 1e-20

    def test_zero_score_gives_noise_norm(self):
        expected = np.mean([
            np.dot(z, z) / kernel_coeffs(float(t), SCHED)[1]
            for t, z in zip(self.t, self.z)
        ])
        loss = dsm_loss(lambda y, t: np.zeros_like(y), self.y0, self.t, self.z, SCHED)
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_batch_permutation_invariant(self):
        perm = np.random.default_rng(0).permutation(8)
        a = dsm_loss(lambda y, t: -y, self.y0, self.t, self.z, SCHED)
        b = dsm_loss(lambda y, t: -y, self.y0[perm], self.t[perm], self.z[perm], SCHED)
        assert a == pytest.approx(b, rel=1e-12)

    def test_t_below_cutoff_rejected(self):
        t = self.t.copy()
        t[3] = 1e-7
        with pytest.raises(ValueError, match="t_min"):
            dsm_loss(lambda y, t: -y, self.y0, t, self.z, SCHED)

    def test_linear_model_parameter_gradient_matches_fd(self):
        # score(y, t) = W y with analytic dL/dW = mean 2 (W y + z/sigma) y^T
        rng = np.random.default_rng(8)
        W = rng.standard_normal((5, 5)) * 0.1
        analytic = np.zeros_like(W)
        for y0, t, z in zip(self.y0, self.t, self.z):
            alpha, sigma2 = kernel_coeffs(float(t), SCHED)
            yt = alpha * y0 + np.sqrt(sigma2) * z
            err = W @ yt + z / np.sqrt(sigma2)
            analytic += 2.0 * np.outer(err, yt)
        analytic /= self.y0.shape[0]

        h = 1e-6
        for r in range(5):
            for c in range(5):
                Wp, Wm = W.copy(), W.copy()
                Wp[r, c] += h
                Wm[r, c] -= h
                lp = dsm_loss(lambda y, t: Wp @ y, self.y0, self.t, self.z, SCHED)
                lm = dsm_loss(lambda y, t: Wm @ y, self.y0, self.t, self.z, SCHED)
                fd = (lp - lm) / (2 * h)
                assert analytic[r, c] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestGaussianScoreOracle:
    def test_zero_at_mode(self):
        m0 = np.array([1.0, -2.0])
        oracle = gaussian_score_oracle(m0, np.ones(2), SCHED)
        alpha, _ = kernel_coeffs(0.4, SCHED)
        assert np.allclose(oracle(alpha * m0, 0.4), 0.0, atol=1e-14)

    def test_matches_numerical_log_density_gradient(self):
        m0 = np.array([0.5, -1.0, 2.0])
        v0 = np.array([1.0, 0.5, 2.0])
        oracle = gaussian_score_oracle(m0, v0, SCHED)
        t = 0.6
        alpha, sigma2 = kernel_coeffs(t, SCHED)
        var = alpha**2 * v0 + sigma2

        def logp(y):
            return float(-0.5 * np.sum((y - alpha * m0) ** 2 / var))

        rng = np.random.default_rng(1)
        y = rng.standard_normal(3)
        s = oracle(y, t)
        h = 1e-5
        for k in range(3):
            yp, ym = y.copy(), y.copy()
            yp[k] += h
            ym[k] -= h
            fd = (logp(yp) - logp(ym)) / (2 * h)
            assert s[k] == pytest.approx(fd, rel=1e-6, abs=1e-10)

    def test_prior_limit_at_final_time(self):
        oracle = gaussian_score_oracle(np.zeros(4), np.ones(4), SCHED)
        y = np.array([1.0, -0.5, 2.0, 0.1])
        s = oracle(y, 1.0)
        assert np.max(np.abs(s + y)) < 0.01 * np.max(np.abs(y))
