import numpy as np
import pytest
from conftest import make_exp_linear_path

import rvolest.estimator as estimator_mod
from rvolest import (
    CholeskyFailure,
    ModelSpec,
    ObservationPath,
    OptimizerOptions,
    ParameterBox,
    RobustConfig,
    SingularGamma,
    check_taper_schedule,
    confidence_intervals,
    eps_dprime,
    eps_prime,
    estimate,
    gqlf,
    hess_objective,
    k_const,
    make_builtin,
    plugin_matrices,
    scaled_increments,
)
from rvolest.model import CovariateSource


def const_model_path(n=64, eps2=1.0):
    """const-levy path whose scaled increments satisfy eps_j^2 = eps2 exactly."""
    model = make_builtin("const-levy")
    h = 1.0 / n
    signs = np.resize([1.0, -1.0], n)
    responses = np.concatenate([[0.0], np.cumsum(signs * np.sqrt(eps2 * h))])
    path = ObservationPath(
        n=n, T=1.0, times=np.arange(n + 1) * h,
        covariates=np.zeros((n + 1, 1)), responses=responses,
    )
    return path, model


class TestOptimizer:
    def test_interior_argmax_exact(self):
        # const-levy GQLF is -(n/2)(theta + C e^{-theta}) with argmax log C
        path, model = const_model_path(n=50, eps2=1.7)
        res = estimate(path, model, RobustConfig.gqlf())
        assert res.converged
        assert not res.used_fallback
        assert res.theta_hat[0] == pytest.approx(np.log(1.7), abs=1e-7)
        assert res.projected_grad_norm < 1e-6

    def test_argmax_invariant_under_positive_scaling(self, rng, monkeypatch):
        path, model = make_exp_linear_path(rng, n=400)
        config = RobustConfig.density_power(0.5)
        base = estimate(path, model, config)
        original = estimator_mod.value_and_grad

        def scaled(*args, **kwargs):
            val, grad = original(*args, **kwargs)
            return 3.7 * val, 3.7 * grad

        monkeypatch.setattr(estimator_mod, "value_and_grad", scaled)
        rescaled = estimate(path, model, config)
        np.testing.assert_allclose(rescaled.theta_hat, base.theta_hat, atol=1e-6)

    def test_deterministic(self, rng):
        path, model = make_exp_linear_path(rng, n=300, spikes=2)
        config = RobustConfig.hoelder(0.4)
        a = estimate(path, model, config)
        b = estimate(path, model, config)
        np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
        np.testing.assert_array_equal(a.gamma_hat, b.gamma_hat)
        assert a.objective_value == b.objective_value

    def test_theta_stays_in_box(self, rng):
        box = ParameterBox(lower=[-0.5] * 3, upper=[0.5] * 3, initial=[0.0] * 3)
        model = make_builtin("exp-linear-3", box)
        path, _ = make_exp_linear_path(rng, n=200)
        res = estimate(path, model, RobustConfig.gqlf())
        assert model.box.contains(res.theta_hat)
        assert res.boundary_active.any()  # true optimum lies outside this box

    def test_initial_override_clamped(self, rng):
        path, model = make_exp_linear_path(rng, n=100)
        opts = OptimizerOptions(initial=np.array([50.0, 0.0, 0.0]))
        res = estimate(path, model, RobustConfig.gqlf(), opts)
        assert model.box.contains(res.theta_hat)

    def test_nelder_mead_fallback_on_cholesky_failure(self):
        # S(theta) = theta with an invalid region inside the box: the first
        # quasi-Newton trial step lands there and triggers the fallback.
        def S(x, theta):
            return float(theta[0])

        def dS(x, theta):
            return np.array([1.0])

        model = ModelSpec(
            name="linear-variance", d=1, p=1, cov_dim=1, S=S, dS=dS,
            box=ParameterBox(lower=[-10.0], upper=[3.0], initial=[2.0]),
            covariate_source=CovariateSource.EXTERNAL,
        )
        path, _ = const_model_path(n=100, eps2=1.2)
        res = estimate(path, model, RobustConfig.gqlf())
        assert res.used_fallback
        assert res.theta_hat[0] == pytest.approx(1.2, abs=1e-3)

    def test_fallback_disabled_raises(self):
        def S(x, theta):
            return float(theta[0])

        def dS(x, theta):
            return np.array([1.0])

        model = ModelSpec(
            name="linear-variance", d=1, p=1, cov_dim=1, S=S, dS=dS,
            box=ParameterBox(lower=[-10.0], upper=[3.0], initial=[2.0]),
            covariate_source=CovariateSource.EXTERNAL,
        )
        path, _ = const_model_path(n=100, eps2=1.2)
        with pytest.raises(CholeskyFailure):
            estimate(path, model, RobustConfig.gqlf(), OptimizerOptions(fallback=False))


class TestPluginMatrices:
    def test_fisher_constant_model(self):
        path, model = const_model_path()
        _, _, fisher = plugin_matrices(path, model, np.zeros(1), RobustConfig.gqlf())
        assert fisher[0, 0] == pytest.approx(0.5, rel=1e-14)

    def test_gqlf_variant_returns_fisher(self):
        path, model = const_model_path()
        gamma, sigma, fisher = plugin_matrices(path, model, np.zeros(1), RobustConfig.gqlf())
        np.testing.assert_array_equal(gamma, fisher)
        np.testing.assert_array_equal(sigma, fisher)

    def test_dp_closed_forms_at_lambda_one(self):
        # constant model S = e^theta at theta = 0: frozen closed-form oracles
        path, model = const_model_path()
        gamma, sigma, _ = plugin_matrices(
            path, model, np.zeros(1), RobustConfig.density_power(1.0)
        )
        want_gamma = k_const(1.0, 1) * 0.375
        want_sigma = k_const(2.0, 1) / 6.0 + eps_prime(1.0, 1) / 4.0
        assert gamma[0, 0] == pytest.approx(want_gamma, rel=1e-12)
        assert gamma[0, 0] == pytest.approx(0.0528928, abs=1e-6)
        assert sigma[0, 0] == pytest.approx(want_sigma, rel=1e-12)
        assert sigma[0, 0] == pytest.approx(0.0103411, abs=1e-6)

    def test_hoelder_closed_forms_at_lambda_one(self):
        path, model = const_model_path()
        gamma, sigma, _ = plugin_matrices(
            path, model, np.zeros(1), RobustConfig.hoelder(1.0)
        )
        assert gamma[0, 0] == pytest.approx(k_const(1.0, 1) / 4.0, rel=1e-12)
        want_sigma = k_const(2.0, 1) / 6.0 + eps_dprime(1.0, 1)
        assert sigma[0, 0] == pytest.approx(want_sigma, rel=1e-12)

    @pytest.mark.parametrize("make_config",
                             [RobustConfig.density_power, RobustConfig.hoelder])
    def test_lambda_to_zero_limits(self, make_config):
        path, model = const_model_path()
        theta = np.zeros(1)
        _, _, fisher = plugin_matrices(path, model, theta, RobustConfig.gqlf())
        gamma, sigma, _ = plugin_matrices(path, model, theta, make_config(1e-4))
        assert np.abs(gamma - fisher).max() < 1e-3
        assert np.abs(sigma - fisher).max() < 1e-3

    def test_plugin_matches_hessian_on_clean_data(self, rng):
        path, model = make_exp_linear_path(rng, n=5000)
        config = RobustConfig.density_power(0.5)
        res = estimate(path, model, config)
        gamma, _, _ = plugin_matrices(path, model, res.theta_hat, config)
        hess = -hess_objective(path, model, res.theta_hat, config) / path.n
        rel = np.abs(hess - gamma).max() / np.abs(gamma).max()
        assert rel < 0.05

    def test_empirical_score_outer_product_cross_check(self, rng):
        # Sigma-hat closed form vs the empirical outer product of per-increment
        # scores on clean data at theta0 (they estimate the same limit).
        path, model = make_exp_linear_path(rng, n=5000)
        theta0 = np.array([-2.0, 3.0, 0.0])
        lam = 0.5
        config = RobustConfig.density_power(lam)
        _, sigma, _ = plugin_matrices(path, model, theta0, config)
        x = path.covariates[:-1]
        eps = scaled_increments(path)[:, 0]
        s = model.s_values(x, theta0)
        t = model.ds_values(x, theta0) / s[:, None]
        q = eps**2 / s
        w = np.exp(-0.5 * lam * (np.log(2 * np.pi) + q))
        scores = 0.5 * np.exp(-0.5 * lam * np.log(s))[:, None] * (
            (w * (q - 1.0))[:, None] + lam * k_const(lam, 1)
        ) * t
        emp = scores.T @ scores / path.n
        assert np.abs(emp - sigma).max() / np.abs(sigma).max() < 0.1


class TestConfidenceIntervals:
    def test_half_width_identity_avar(self):
        theta = np.zeros(3)
        ci, avar, _, neg = confidence_intervals(theta, np.eye(3), np.eye(3), n=100)
        np.testing.assert_allclose(avar, np.eye(3), atol=1e-14)
        half = (ci[:, 1] - ci[:, 0]) / 2
        assert half == pytest.approx([0.196] * 3, abs=5e-4)
        assert neg == []

    def test_u_stat(self):
        theta = np.array([1.0])
        _, _, u, _ = confidence_intervals(
            theta, np.eye(1), np.eye(1), n=400, theta0=np.array([0.8])
        )
        assert u[0] == pytest.approx(20 * 0.2, rel=1e-12)

    def test_negative_variance_reported_not_fabricated(self):
        gamma = np.eye(2)
        sigma = np.diag([-1.0, 1.0])
        ci, _, u, neg = confidence_intervals(
            np.zeros(2), gamma, sigma, n=50, theta0=np.zeros(2)
        )
        assert neg == [0]
        assert np.isnan(ci[0]).all() and np.isfinite(ci[1]).all()
        assert np.isnan(u[0]) and np.isfinite(u[1])

    def test_singular_gamma_raises(self):
        with pytest.raises(SingularGamma):
            confidence_intervals(np.zeros(2), np.zeros((2, 2)), np.eye(2), n=10)

    def test_ci_brackets_estimate(self, rng):
        path, model = make_exp_linear_path(rng, n=500)
        res = estimate(path, model, RobustConfig.density_power(0.3))
        assert res.ci is not None
        assert np.all(res.ci[:, 0] <= res.theta_hat + 1e-12)
        assert np.all(res.theta_hat <= res.ci[:, 1] + 1e-12)


class TestTaperSchedule:
    def test_reference_value(self):
        assert check_taper_schedule(5000, 0.1, kappa=1.0, T=1.0) == pytest.approx(
            np.sqrt(5000) / 5000 / 0.1, rel=1e-12
        )
        assert check_taper_schedule(5000, 0.1) == pytest.approx(0.1414, abs=1e-4)

    def test_vanishes_with_n(self):
        vals = [check_taper_schedule(n, 0.1) for n in (100, 1000, 10_000, 100_000)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 0.05

    def test_warning_regime_for_rough_jumps(self):
        # kappa near 1/2 with tiny lambda: diagnostic blows up
        val = check_taper_schedule(5000, 0.01, kappa=0.6)
        assert val == pytest.approx(np.sqrt(5000) * 5000 ** (-0.6) / 0.01, rel=1e-12)
        assert val > 1.0

    def test_domain(self):
        with pytest.raises(ValueError):
            check_taper_schedule(0, 0.1)
        with pytest.raises(ValueError):
            check_taper_schedule(100, 0.1, kappa=0.5)


class TestCleanDataConsistency:
    def test_small_lambda_matches_gqlf_argmax(self, rng):
        path, model = make_exp_linear_path(rng, n=5000)
        base = estimate(path, model, RobustConfig.gqlf())
        small = estimate(path, model, RobustConfig.density_power(1e-4))
        assert np.abs(small.theta_hat - base.theta_hat).max() < 0.01

    def test_estimate_recovers_truth_roughly(self, rng):
        path, model = make_exp_linear_path(rng, n=5000)
        res = estimate(path, model, RobustConfig.gqlf())
        np.testing.assert_allclose(res.theta_hat, [-2.0, 3.0, 0.0], atol=0.15)
        assert gqlf(path, model, res.theta_hat) == res.objective_value
