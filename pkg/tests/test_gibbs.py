import dataclasses

import numpy as np
import pytest
from scipy import stats

from hybridsmooth.design import build_design, spline_fit
from hybridsmooth.diagnostics import ess
from hybridsmooth.gibbs import (
    ChainConfig,
    GibbsSampler,
    MCMCState,
    Priors,
    detect_bayes,
    gibbs_step,
    init_state,
    orthogonalize,
    run_chains,
    sample_inverse_gaussian,
)
from hybridsmooth.stepbasis import step_basis


def small_problem(n=40, seed=0, step=0.0, sigma=0.1):
    rng = np.random.default_rng(seed)
    d = build_design(np.linspace(0, 1, n))
    b = step_basis(n, "centered")
    y = 1.0 + 2.0 * d.times + sigma * rng.standard_normal(n)
    if step:
        y += step * (np.arange(n) >= n // 2)
    return d, b, y


class TestOrthogonalize:
    def test_projection_idempotent(self):
        d, b, _ = small_problem()
        ops = orthogonalize(d, b)
        np.testing.assert_allclose(
            ops.proj_trend @ ops.proj_trend, ops.proj_trend, atol=1e-12
        )

    def test_step_columns_detrended(self):
        d, b, _ = small_problem()
        ops = orthogonalize(d, b)
        assert np.abs(ops.proj_trend @ ops.psi_perp).max() < 1e-10
        assert np.abs(d.linear.T @ ops.psi_perp).max() < 1e-10

    def test_smooth_filter_kills_trend(self):
        d, b, _ = small_problem()
        ops = orthogonalize(d, b)
        assert np.abs(ops.hmat @ d.linear).max() < 1e-10

    def test_near_orthogonality_of_filter(self):
        # the detrended step columns span the whole trend complement, so
        # hmat itself is delta-small; the leakage bound is absolute
        d, b, _ = small_problem()
        ops = orthogonalize(d, b, delta=1e-8)
        leak = np.linalg.norm(ops.proj_step @ ops.hmat, 2)
        assert leak <= 10 * ops.delta

    def test_reconstruction_identity(self):
        """The reparametrized assembly reproduces the original signal."""
        rng = np.random.default_rng(7)
        d, b, _ = small_problem(n=30)
        ops = orthogonalize(d, b)
        x, psi = d.linear, b.matrix
        xtx = x.T @ x
        for _ in range(5):
            beta = rng.standard_normal(2)
            gamma = rng.standard_normal(29)
            g = rng.standard_normal(30)
            signal = x @ beta + psi @ gamma + g
            beta_o = beta + np.linalg.solve(xtx, x.T @ (psi @ gamma + g))
            gamma_o = gamma + ops.cross @ g
            rebuilt = x @ beta_o + ops.psi_perp @ gamma_o + ops.hmat @ g
            np.testing.assert_allclose(rebuilt, signal, atol=1e-8)

    def test_disabled_variant_is_identity(self):
        d, b, _ = small_problem()
        ops = orthogonalize(d, b, enabled=False)
        np.testing.assert_array_equal(ops.psi_perp, b.matrix)
        np.testing.assert_array_equal(ops.hmat, np.eye(40))
        assert np.all(ops.cross == 0)


class TestInverseGaussian:
    def test_moments(self):
        rng = np.random.default_rng(123)
        mu, shape = 2.0, 3.5
        draws = sample_inverse_gaussian(np.full(10**6, mu), shape, rng)
        assert np.mean(draws) == pytest.approx(mu, rel=0.01)
        assert np.var(draws) == pytest.approx(mu**3 / shape, rel=0.03)

    def test_concentration_large_shape(self):
        rng = np.random.default_rng(5)
        mu = 1.7
        stds = []
        for shape in [1e2, 1e4, 1e6]:
            draws = sample_inverse_gaussian(np.full(20000, mu), shape, rng)
            stds.append(np.std(draws))
        assert stds[0] > stds[1] > stds[2]
        assert np.mean(draws) == pytest.approx(mu, rel=1e-3)

    def test_against_scipy_distribution(self):
        rng = np.random.default_rng(42)
        mu, shape = 0.8, 2.0
        draws = sample_inverse_gaussian(np.full(20000, mu), shape, rng)
        # scipy parametrizes by mu/shape with scale = shape
        ref = stats.invgauss(mu / shape, scale=shape)
        _, p = stats.kstest(draws, ref.cdf)
        assert p > 0.01

    def test_rejects_bad_parameters(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            sample_inverse_gaussian(np.array([-1.0]), 1.0, rng)


class TestScaleMixture:
    @pytest.mark.parametrize("sigma2,lambda2", [(1.0, 1.0), (0.25, 4.0), (4.0, 0.5)])
    def test_laplace_identity(self, sigma2, lambda2):
        """Mixing a centered normal over exponential variances gives the
        double-exponential with rate sqrt(lambda2/sigma2)."""
        rng = np.random.default_rng(int(sigma2 * 100 + lambda2 * 10))
        n = 10**5
        tau2 = rng.exponential(scale=2.0 / lambda2, size=n)
        gamma = rng.standard_normal(n) * np.sqrt(sigma2 * tau2)
        ref = stats.laplace(scale=np.sqrt(sigma2 / lambda2))
        _, p = stats.kstest(gamma, ref.cdf)
        assert p > 0.01


class TestConditionals:
    def test_beta_conditional_mean(self):
        d, b, y = small_problem(n=30, seed=3)
        ops = orthogonalize(d, b)
        priors = Priors()
        sampler = GibbsSampler(y, d, b, ops, priors)
        rng = np.random.default_rng(11)
        state = init_state(y, b, d, priors, ops)
        state.sigma2 = 0.05
        # closed-form conditional mean
        resid = y - sampler.psi_perp @ state.gamma_ortho - sampler.hmat @ state.smooth
        target = np.linalg.solve(sampler.xtx, sampler.x.T @ resid)
        cov = np.linalg.inv(sampler.xtx / state.sigma2)
        draws = np.empty((10**5, 2))
        for i in range(10**5):
            sampler.update_beta(state, rng)
            draws[i] = state.beta_ortho
            state.beta_ortho = np.zeros(2)
        se = np.sqrt(np.diag(cov) / 10**5)
        assert np.all(np.abs(draws.mean(axis=0) - target) < 3 * se + 1e-12)

    def test_sigma2_first_sweep_replaces_nan(self):
        d, b, y = small_problem(n=25, seed=9)
        ops = orthogonalize(d, b)
        priors = Priors()
        state = init_state(y, b, d, priors, ops)
        assert np.isnan(state.sigma2)
        rng = np.random.default_rng(1)
        new = gibbs_step(state, y, ops, d, b, priors, rng)
        assert new.sigma2 > 0 and np.isfinite(new.sigma2)
        assert np.all(new.tau2 >= 1e-12)

    def test_omega_conditional_moments(self):
        d, b, y = small_problem(n=25, seed=13)
        ops = orthogonalize(d, b)
        priors = Priors(omega_shape=3.0, omega_rate=1.5)
        sampler = GibbsSampler(y, d, b, ops, priors)
        rng = np.random.default_rng(2)
        state = init_state(y, b, d, priors, ops)
        state.smooth = rng.standard_normal(25) * 0.01
        quad = state.smooth @ sampler.k_inv @ state.smooth
        shape = 25 / 2.0 + 3.0
        rate = quad / 2.0 + 1.5
        draws = np.empty(10**5)
        for i in range(10**5):
            sampler.update_omega(state, rng)
            draws[i] = state.omega
        assert draws.mean() == pytest.approx(shape / rate, rel=0.02)
        assert draws.var() == pytest.approx(shape / rate**2, rel=0.05)


class TestSplineMatch:
    def test_reduced_model_tracks_spline(self):
        """With the step columns removed and penalties frozen, the chain is
        a Bayesian smoothing spline; its posterior mean trend must track
        the penalized fit at the matched penalty."""
        n = 60
        rng0 = np.random.default_rng(77)
        d = build_design(np.linspace(0, 1, n))
        b = step_basis(n, "centered")
        y = np.sin(2 * np.pi * d.times) + 0.1 * rng0.standard_normal(n)

        zero_basis = dataclasses.replace(b, matrix=np.zeros_like(b.matrix))
        ops = orthogonalize(d, zero_basis)
        priors = Priors()
        sampler = GibbsSampler(y, d, zero_basis, ops, priors)
        sigma2, omega_prec = 0.01, 30.0
        state = init_state(y, zero_basis, d, priors, ops)
        state.sigma2 = sigma2
        state.omega = omega_prec
        state.gamma_ortho = np.zeros(n - 1)

        rng = np.random.default_rng(8)
        sweeps, burn = 4000, 200
        trend_draws = np.empty((sweeps - burn, n))
        for it in range(sweeps):
            sampler.update_beta(state, rng)
            sampler.update_smooth(state, rng)
            if it >= burn:
                trend_draws[it - burn] = d.linear @ state.beta_ortho + ops.hmat @ state.smooth

        target = spline_fit(y, d, sigma2 * omega_prec)
        mean = trend_draws.mean(axis=0)
        for i in range(n):
            neff = max(ess(trend_draws[None, :, i]), 10.0)
            se = trend_draws[:, i].std() / np.sqrt(neff)
            assert abs(mean[i] - target[i]) < 3 * se + 1e-4


class TestInitState:
    def test_flat_series_zero_gamma(self):
        d = build_design(np.linspace(0, 1, 20))
        b = step_basis(20, "forward")
        ops = orthogonalize(d, b)
        y = np.full(20, 3.3)
        state = init_state(y, b, d, Priors(), ops)
        np.testing.assert_array_equal(state.gamma_ortho, np.zeros(19))

    def test_jump_seeded(self):
        rng = np.random.default_rng(31)
        n = 200
        d = build_design(np.linspace(0, 1, n))
        b = step_basis(n, "forward")
        ops = orthogonalize(d, b)
        y = 10.0 * (np.arange(n) >= 120) + 0.1 * rng.standard_normal(n)
        z = np.abs(np.diff(y))
        q95 = np.quantile(z, 0.95)
        state = init_state(y, b, d, Priors(), ops)
        expected = np.where(z >= q95, z, 0.0)
        # the seeded coefficients sit at the thresholded differences
        np.testing.assert_allclose(state.gamma_ortho, expected, atol=1e-12)
        assert expected[119] == pytest.approx(z[119])

    def test_tau2_at_prior_mean(self):
        d, b, y = small_problem()
        ops = orthogonalize(d, b)
        priors = Priors(lambda2_shape=4.0, lambda2_rate=2.0)
        state = init_state(y, b, d, priors, ops)
        lam2 = 4.0 / 2.0
        np.testing.assert_allclose(state.tau2, np.full(39, 2.0 / lam2))


class TestRunChains:
    def test_determinism(self):
        d, b, y = small_problem(n=25, seed=4)
        cfg = ChainConfig(chains=2, iters=60, burnin=20, seed=99)
        s1 = run_chains(y, d, b, cfg)
        s2 = run_chains(y, d, b, cfg)
        np.testing.assert_array_equal(s1.gamma, s2.gamma)
        np.testing.assert_array_equal(s1.omega, s2.omega)

    def test_threads_match_serial(self):
        d, b, y = small_problem(n=25, seed=4)
        cfg1 = ChainConfig(chains=2, iters=50, burnin=10, seed=7, threads=1)
        cfg2 = ChainConfig(chains=2, iters=50, burnin=10, seed=7, threads=2)
        s1 = run_chains(y, d, b, cfg1)
        s2 = run_chains(y, d, b, cfg2)
        np.testing.assert_array_equal(s1.gamma, s2.gamma)

    def test_back_transform_consistency(self):
        """Reassembling the signal from back-transformed draws matches the
        reparametrized assembly draw by draw."""
        d, b, y = small_problem(n=30, seed=6, step=1.0)
        ops = orthogonalize(d, b)
        priors = Priors()
        sampler = GibbsSampler(y, d, b, ops, priors)
        state = init_state(y, b, d, priors, ops)
        rng = np.random.default_rng(3)
        for _ in range(50):
            state = sampler.step(state, rng)
            raw = (
                d.linear @ state.beta_ortho
                + ops.psi_perp @ state.gamma_ortho
                + ops.hmat @ state.smooth
            )
            beta, gamma, smooth = sampler.back_transform(state)
            rebuilt = d.linear @ beta + b.matrix @ gamma + smooth
            assert np.abs(rebuilt - raw).max() < 1e-6

    def test_step_recovery_smoke(self):
        d, b, y = small_problem(n=120, seed=10, step=1.0, sigma=0.1)
        cfg = ChainConfig(chains=2, iters=500, burnin=150, seed=5)
        samples = run_chains(y, d, b, cfg)
        det = detect_bayes(samples, threshold=0.15)
        assert 60 in det.flagged_indices

    def test_diagnostics_present(self):
        d, b, y = small_problem(n=25, seed=4)
        cfg = ChainConfig(chains=2, iters=80, burnin=20, seed=1)
        s = run_chains(y, d, b, cfg)
        for key in ("sigma2", "lambda2", "omega"):
            assert s.diagnostics[key]["ess"] > 0
            assert np.isfinite(s.diagnostics[key]["rhat"])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ChainConfig(iters=100, burnin=100)


class TestDetectBayes:
    def make_samples(self, draws):
        n_minus_1 = draws.shape[-1]
        from hybridsmooth.gibbs import PosteriorSamples

        return PosteriorSamples(
            beta=np.zeros((1, len(draws), 2)),
            gamma=draws[None],
            smooth=np.zeros((1, len(draws), n_minus_1 + 1)),
            sigma2=np.ones((1, len(draws))),
            lambda2=np.ones((1, len(draws))),
            omega=np.ones((1, len(draws))),
            step_indices=np.arange(1, n_minus_1 + 1),
            burnin=0,
            thin=1,
            seed=0,
        )

    def test_zero_draws_no_flags(self):
        s = self.make_samples(np.zeros((100, 5)))
        det = detect_bayes(s)
        assert not det.flagged.any()

    def test_concentrated_draw_flagged(self):
        draws = np.zeros((200, 5))
        draws[:, 2] = 0.5 + 0.01 * np.random.default_rng(0).standard_normal(200)
        det = detect_bayes(self.make_samples(draws))
        assert det.flagged_indices.tolist() == [3]

    def test_below_threshold_not_flagged(self):
        draws = np.zeros((200, 5))
        draws[:, 1] = 0.10 + 0.001 * np.random.default_rng(1).standard_normal(200)
        det = detect_bayes(self.make_samples(draws), threshold=0.15)
        # interval excludes zero but the mean is inside the threshold band
        assert det.lower[1] > 0
        assert not det.flagged[1]
