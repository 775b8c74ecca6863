import numpy as np
import pytest
import scipy.special as sp

from darma import model, simplex
from darma.errors import InvalidInput, NumericalError

from helpers import sin_designs, simulate_panel, stable_params


def scipy_log_posterior(spec, theta, panel):
    """Independent straightforward reimplementation on scipy specials."""
    params = model.DarmaParams.unflatten(spec, theta)
    ref, K, J = spec.ref_index, spec.K, spec.J
    keep = [j for j in range(J) if j != ref]
    e = np.log(panel.Y[:, keep] / panel.Y[:, [ref]])
    m = panel.X @ params.beta.T
    phi = np.exp(panel.Z @ params.gamma)
    m0 = spec.burn_in
    eps = np.zeros((panel.T, K))
    ll = 0.0
    for t in range(panel.T):
        if t < m0:
            continue
        eta = m[t].copy()
        for p in range(1, spec.P + 1):
            eta += params.A[p - 1] @ (e[t - p] - m[t - p])
        for q in range(1, spec.Q + 1):
            eta += params.B[q - 1] @ eps[t - q]
        full = np.insert(eta, ref, 0.0)
        w = np.exp(full - full.max())
        mu = w / w.sum()
        alpha = np.maximum(phi[t] * mu, 1e-10)
        ll += (sp.gammaln(alpha.sum()) - sp.gammaln(alpha).sum()
               + ((alpha - 1.0) * np.log(panel.Y[t])).sum())
        if spec.variant == model.CENTERED:
            g = sp.psi(alpha)[keep] - sp.psi(alpha[ref])
            eps[t] = e[t] - g
        else:
            eps[t] = e[t] - eta
    sd = model.DEFAULT_PRIORS.sd_vector(spec)
    lp = (-0.5 * np.log(2 * np.pi) * theta.size - np.log(sd).sum()
          - 0.5 * ((theta / sd) ** 2).sum())
    return ll + lp


class TestFilter:
    def test_covariate_only_model(self):
        spec = model.DarmaSpec(P=0, Q=0, J=4, ref_index=2, variant="raw")
        panel, params = simulate_panel(spec, T=30, seed=1)
        path = model.filter(spec, params, panel)
        expected = panel.X @ params.beta.T
        np.testing.assert_allclose(path.eta, expected, atol=1e-14)

    def test_zero_ma_matrix_makes_variants_identical(self, centered_spec,
                                                     raw_spec):
        params = stable_params(centered_spec)
        params = model.DarmaParams(params.A, np.zeros_like(params.B),
                                   params.beta, params.gamma)
        panel, _ = simulate_panel(centered_spec, params=params, T=60, seed=2)
        path_c = model.filter(centered_spec, params, panel)
        path_r = model.filter(raw_spec, params, panel)
        np.testing.assert_allclose(path_c.eta, path_r.eta, atol=1e-14)
        np.testing.assert_allclose(path_c.mu, path_r.mu, atol=1e-14)

    @pytest.mark.parametrize("variant", ["raw", "centered"])
    def test_scalar_recursion_matches_hand_rolled(self, variant):
        # J=2, K=1, T=4: everything reduces to scalar arithmetic
        spec = model.DarmaSpec(P=1, Q=1, J=2, ref_index=1, variant=variant)
        a, b, beta, g0 = 0.6, 0.3, -0.4, np.log(30.0)
        params = model.DarmaParams(np.array([[[a]]]), np.array([[[b]]]),
                                   np.array([[beta]]), np.array([g0, 0.0]))
        y = np.array([[0.35, 0.65], [0.42, 0.58], [0.30, 0.70],
                      [0.55, 0.45]])
        X, Z = sin_designs(4)
        panel = model.SeriesPanel(model.synthetic_dates(4), y, X, Z,
                                  np.zeros(4)) if False else None
        from darma.panel import SeriesPanel
        panel = SeriesPanel(model.synthetic_dates(4), y, X, Z, np.zeros(4))
        path = model.filter(spec, params, panel)

        e = np.log(y[:, 0] / y[:, 1])
        phi = np.exp(g0)
        eta_hand = [beta]
        eps_hand = [0.0]
        for t in range(1, 4):
            eta_t = beta + a * (e[t - 1] - beta) + b * eps_hand[t - 1]
            mu1 = np.exp(eta_t) / (1.0 + np.exp(eta_t))
            if variant == "centered":
                cond = sp.psi(phi * mu1) - sp.psi(phi * (1.0 - mu1))
                eps_t = e[t] - cond
            else:
                eps_t = e[t] - eta_t
            eta_hand.append(eta_t)
            eps_hand.append(eps_t)
        np.testing.assert_allclose(path.eta[:, 0], eta_hand, atol=1e-12)
        np.testing.assert_allclose(path.eps[:, 0], eps_hand, atol=1e-12)

    def test_dimension_mismatch_raises(self, centered_spec):
        panel, params = simulate_panel(centered_spec, T=20, seed=3)
        bad = model.DarmaSpec(P=1, Q=1, J=5, ref_index=2, variant="centered")
        with pytest.raises(InvalidInput):
            model.filter(bad, stable_params(bad), panel)

    def test_filter_is_bitwise_deterministic(self, centered_spec,
                                             small_panel):
        panel, params = small_panel
        p1 = model.filter(centered_spec, params, panel)
        p2 = model.filter(centered_spec, params, panel)
        assert np.array_equal(p1.eta, p2.eta)
        assert np.array_equal(p1.eps, p2.eps)

    def test_raw_centered_residual_identity(self, centered_spec,
                                            small_panel):
        # raw residual minus centered innovation equals the mean bias
        panel, params = small_panel
        path = model.filter(centered_spec, params, panel)
        m0 = centered_spec.burn_in
        eps_raw = path.alr_y - path.eta
        from darma import dirichlet
        for t in range(m0, panel.T):
            b_t = dirichlet.alr_mean(np.maximum(path.mu[t], 1e-300),
                                     float(path.phi[t]),
                                     centered_spec.ref_index) - path.eta[t]
            np.testing.assert_allclose(eps_raw[t] - path.eps[t], b_t,
                                       atol=1e-12)


class TestLogLikelihood:
    def test_decomposes_into_per_row_densities(self, centered_spec,
                                               small_panel):
        from darma import dirichlet
        panel, params = small_panel
        path = model.filter(centered_spec, params, panel)
        total = 0.0
        for t in range(centered_spec.burn_in, panel.T):
            total += dirichlet.log_density(panel.Y[t],
                                           path.phi[t] * path.mu[t])
        got = model.log_likelihood(centered_spec, params, panel)
        assert got == pytest.approx(total, rel=1e-12)

    def test_single_effective_row(self, centered_spec):
        from darma import dirichlet
        panel, params = simulate_panel(centered_spec, T=2, seed=5)
        got = model.log_likelihood(centered_spec, params, panel)
        path = model.filter(centered_spec, params, panel)
        want = dirichlet.log_density(panel.Y[1], path.phi[1] * path.mu[1])
        assert got == pytest.approx(want, rel=1e-12)

    def test_perturbing_truth_lowers_likelihood(self, centered_spec):
        hold = 0
        for seed in range(20):
            panel, params = simulate_panel(centered_spec, T=1000, seed=seed)
            ll_true = model.log_likelihood(centered_spec, params, panel)
            shifted = model.DarmaParams(params.A, params.B,
                                        params.beta + 1.0, params.gamma)
            ll_bad = model.log_likelihood(centered_spec, shifted, panel)
            hold += ll_bad < ll_true
        assert hold >= 18


class TestLogPosterior:
    def test_prior_only_closed_form(self, centered_spec):
        params = model.DarmaParams.zeros(centered_spec)
        sd = model.DEFAULT_PRIORS.sd_vector(centered_spec)
        want = float(-0.5 * np.log(2 * np.pi) * sd.size - np.log(sd).sum())
        assert model.log_prior(centered_spec, params) == pytest.approx(
            want, rel=1e-14)

    def test_posterior_is_likelihood_plus_prior(self, centered_spec,
                                                small_panel):
        panel, params = small_panel
        lp = model.log_posterior(centered_spec, params, panel)
        ll = model.log_likelihood(centered_spec, params, panel)
        pr = model.log_prior(centered_spec, params)
        assert lp == pytest.approx(ll + pr, rel=1e-14)

    @pytest.mark.parametrize("variant", ["raw", "centered"])
    def test_two_point_difference_matches_independent_code(self, variant):
        spec = model.DarmaSpec(P=1, Q=1, J=4, ref_index=2, variant=variant)
        panel, params = simulate_panel(spec, T=50, seed=11)
        rng = np.random.default_rng(23)
        th1 = params.flatten() + 0.05 * rng.standard_normal(spec.dim)
        th2 = params.flatten() + 0.05 * rng.standard_normal(spec.dim)
        got = (model.log_posterior(
                   spec, model.DarmaParams.unflatten(spec, th1), panel)
               - model.log_posterior(
                   spec, model.DarmaParams.unflatten(spec, th2), panel))
        want = (scipy_log_posterior(spec, th1, panel)
                - scipy_log_posterior(spec, th2, panel))
        assert got == pytest.approx(want, abs=1e-10 * max(1, abs(want)))


def central_difference(fn, theta, rel_step=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        h = rel_step * max(1.0, abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (fn(tp) - fn(tm)) / (2.0 * h)
    return g


class TestGradient:
    def test_prior_score_is_gaussian(self, centered_spec):
        rng = np.random.default_rng(1)
        theta = rng.standard_normal(centered_spec.dim)
        sd = model.DEFAULT_PRIORS.sd_vector(centered_spec)
        got = model.grad_log_prior(centered_spec, theta)
        np.testing.assert_allclose(got, -theta / sd ** 2, rtol=1e-14)

    @pytest.mark.parametrize("variant", ["raw", "centered"])
    @pytest.mark.parametrize("orders", [(1, 1), (2, 2), (0, 1)])
    def test_matches_central_finite_differences(self, variant, orders):
        P, Q = orders
        spec = model.DarmaSpec(P=P, Q=Q, J=4, ref_index=2, variant=variant)
        panel, params = simulate_panel(spec, T=40,
                                       seed=100 + P * 10 + Q,
                                       log_phi=np.log(90.0))
        rng = np.random.default_rng(P * 100 + Q)
        theta = params.flatten() + 0.1 * rng.standard_normal(spec.dim)
        logpost = model.make_logpost_fn(spec, panel)
        _, grad = logpost(theta)
        fd = central_difference(lambda th: logpost(th)[0], theta)
        ok = (np.abs(grad - fd)
              <= np.maximum(1e-5 * np.abs(fd), 1e-8)
              ) | (np.abs(grad - fd) <= 2e-6 * np.maximum(np.abs(fd), 1.0))
        assert np.all(ok), np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)

    def test_score_at_truth_is_root_t_scale(self, centered_spec):
        # the likelihood score at the generating values fluctuates on the
        # sqrt(T) Fisher scale, far below the linear-in-T misfit scale
        norms = []
        for seed, T in ((0, 2000), (1, 2000), (2, 8000)):
            panel, params = simulate_panel(centered_spec, T=T, seed=seed)
            logpost = model.make_logpost_fn(centered_spec, panel)
            _, g = logpost(params.flatten())
            glik = g - model.grad_log_prior(centered_spec, params)
            gam = np.linalg.norm(glik[-centered_spec.R_phi:])
            norms.append(gam / np.sqrt(T))
            shifted = params.flatten().copy()
            shifted[-2] += 0.5
            _, g_bad = logpost(shifted)
            gam_bad = np.linalg.norm(
                (g_bad - model.grad_log_prior(centered_spec, shifted))
                [-centered_spec.R_phi:])
            assert gam_bad > 10.0 * gam
        assert max(norms) < 10.0

    def test_nonfinite_gradient_raises_with_index(self, centered_spec,
                                                  small_panel):
        panel, params = small_panel
        bad = model.DarmaParams(params.A, params.B, params.beta,
                                np.array([800.0, 0.0]))
        with pytest.raises(NumericalError):
            model.grad_log_posterior(centered_spec, bad, panel)


class TestSimulate:
    def test_iid_reduction_matches_conditional_mean(self):
        from darma import dirichlet
        spec = model.DarmaSpec(P=0, Q=0, J=4, ref_index=3,
                               variant="centered")
        params = stable_params(spec, log_phi=np.log(80.0))
        T = 60_000
        X, Z = sin_designs(T, R=2)
        Z[:, 1] = 0.0
        panel = model.simulate(spec, params, T, X, Z, rng_seed=3)
        coords = simplex.alr(panel.Y, 3)
        mu = simplex.alr_inv(params.beta[:, 0], 3)
        want = dirichlet.alr_mean(mu, float(np.exp(params.gamma[0])), 3)
        se = coords.std(axis=0, ddof=1) / np.sqrt(T)
        assert np.all(np.abs(coords.mean(axis=0) - want) < 4 * se)

    def test_same_seed_same_panel(self, centered_spec):
        p1, params = simulate_panel(centered_spec, T=50, seed=9)
        p2, _ = simulate_panel(centered_spec, params=params, T=50, seed=9)
        assert np.array_equal(p1.Y, p2.Y)

    def test_centered_innovations_average_to_zero(self, centered_spec):
        from helpers import balanced_params, sin_designs as designs
        params = balanced_params(centered_spec, log_phi=np.log(50.0))
        X, Z = designs(20_000)
        panel = model.simulate(centered_spec, params, 20_000, X, Z,
                               rng_seed=13)
        path = model.filter(centered_spec, params, panel)
        eps = path.eps[centered_spec.burn_in:]
        se = eps.std(axis=0, ddof=1) / np.sqrt(eps.shape[0])
        assert np.all(np.abs(eps.mean(axis=0)) < 4 * se)

    def test_flat_params_roundtrip(self, centered_spec):
        params = stable_params(centered_spec)
        back = model.DarmaParams.unflatten(centered_spec, params.flatten())
        np.testing.assert_array_equal(back.A, params.A)
        np.testing.assert_array_equal(back.B, params.B)
        np.testing.assert_array_equal(back.beta, params.beta)
        np.testing.assert_array_equal(back.gamma, params.gamma)
        assert len(model.param_names(centered_spec)) == centered_spec.dim
