import numpy as np
import pytest
import scipy.special as sp

from darma import dirichlet, forecast, model, simplex
from darma.errors import InvalidInput

from helpers import balanced_params, simulate_panel, sin_designs


def future_designs(panel, h):
    return (np.ones((h, panel.X.shape[1])),
            np.column_stack([np.ones(h)] + [np.zeros(h)] * (
                panel.Z.shape[1] - 1)))


class TestMeanPathAlgebra:
    def test_one_step_raw_centered_gap_is_ma_times_bias(self, centered_spec,
                                                        raw_spec,
                                                        small_panel):
        panel, params = small_panel
        path = model.filter(centered_spec, params, panel)
        Xf, Zf = future_designs(panel, 1)
        eta_c, _ = forecast.forecast_mean_path(centered_spec, params, path,
                                               panel, 1, Xf, Zf)
        eta_r, _ = forecast.forecast_mean_path(raw_spec, params, path,
                                               panel, 1, Xf, Zf)
        t_last = panel.T - 1
        b_last = dirichlet.alr_mean(path.mu[t_last], float(path.phi[t_last]),
                                    centered_spec.ref_index) \
            - path.eta[t_last]
        want = params.B[0] @ b_last
        np.testing.assert_allclose(eta_r[0] - eta_c[0], want, atol=1e-12)

    def test_centered_ma_contribution_vanishes_past_q(self):
        # without autoregression the predictor collapses to the covariate
        # mean as soon as the horizon passes the MA order
        spec = model.DarmaSpec(P=0, Q=1, J=4, ref_index=2,
                               variant="centered")
        panel, params = simulate_panel(spec, T=80, seed=6)
        path = model.filter(spec, params, panel)
        Xf, Zf = future_designs(panel, 4)
        eta_hat, _ = forecast.forecast_mean_path(spec, params, path, panel,
                                                 4, Xf, Zf)
        base = (Xf @ params.beta.T)
        assert np.max(np.abs(eta_hat[0] - base[0])) > 1e-4
        np.testing.assert_allclose(eta_hat[1:], base[1:], atol=1e-14)

    def test_one_step_keeps_all_q_shocks(self):
        spec = model.DarmaSpec(P=0, Q=2, J=4, ref_index=2,
                               variant="centered")
        panel, params = simulate_panel(spec, T=80, seed=8)
        path = model.filter(spec, params, panel)
        Xf, Zf = future_designs(panel, 1)
        eta_hat, _ = forecast.forecast_mean_path(spec, params, path, panel,
                                                 1, Xf, Zf)
        T = panel.T
        want = (Xf[0] @ params.beta.T
                + params.B[0] @ path.eps[T - 1]
                + params.B[1] @ path.eps[T - 2])
        np.testing.assert_allclose(eta_hat[0], want, atol=1e-13)

    def test_missing_future_covariates_rejected(self, centered_spec,
                                                small_panel):
        panel, params = small_panel
        path = model.filter(centered_spec, params, panel)
        with pytest.raises(InvalidInput):
            forecast.forecast_mean_path(centered_spec, params, path, panel,
                                        3, np.ones((2, 1)), np.ones((3, 2)))


def simulate_forward_eta(spec, params, path, panel, h, Xf, Zf, n_sims,
                         seed):
    """Vectorized forward simulation of the predictor, for MC oracles."""
    rng = np.random.default_rng(seed)
    T, K, J, ref = panel.T, spec.K, spec.J, spec.ref_index
    centered = spec.variant == model.CENTERED
    m_hist = panel.X @ params.beta.T
    m_fut = Xf @ params.beta.T
    phi_fut = np.exp(Zf @ params.gamma)
    eps_hist = forecast._variant_eps(spec, path)
    keep = [j for j in range(J) if j != ref]
    sim_a, sim_eps = {}, {}
    eta_sum = np.zeros((h, K))
    eta_last = None
    for step in range(1, h + 1):
        s = T - 1 + step
        eta = np.broadcast_to(m_fut[step - 1], (n_sims, K)).copy()
        for p in range(1, spec.P + 1):
            idx = s - p
            a_lag = sim_a[idx] if idx >= T else \
                np.broadcast_to(path.alr_y[idx], (n_sims, K))
            m_lag = m_fut[idx - T] if idx >= T else m_hist[idx]
            eta += (a_lag - m_lag) @ params.A[p - 1].T
        for q in range(1, spec.Q + 1):
            idx = s - q
            e_lag = sim_eps[idx] if idx >= T else \
                np.broadcast_to(eps_hist[idx], (n_sims, K))
            eta += e_lag @ params.B[q - 1].T
        eta_sum[step - 1] = eta.mean(axis=0)
        eta_last = eta
        mu = simplex.alr_inv(eta, ref)
        phi = phi_fut[step - 1]
        alpha = np.maximum(phi * mu, dirichlet.EPS_SHAPE)
        g = dirichlet._sample_gamma(rng, alpha)
        y = simplex.floor_and_close(g / g.sum(axis=1, keepdims=True))
        a = simplex.alr(y, ref)
        sim_a[s] = a
        if centered:
            psi = sp.psi(alpha)
            sim_eps[s] = a - (psi[:, keep] - psi[:, [ref]])
        else:
            sim_eps[s] = a - eta
    return eta_sum, eta_last


@pytest.mark.parametrize("variant", ["centered", "raw"])
@pytest.mark.parametrize("Q", [1, 2])
def test_mean_path_matches_forward_simulation(variant, Q):
    spec = model.DarmaSpec(P=1, Q=Q, J=4, ref_index=2, variant=variant)
    params = balanced_params(spec, log_phi=np.log(300.0), ar=0.3, ma=0.25)
    X, Z = sin_designs(120)
    panel = model.simulate(spec, params, 120, X, Z, rng_seed=31)
    path = model.filter(spec, params, panel)
    h = 3
    Xf, Zf = future_designs(panel, h)
    eta_hat, _ = forecast.forecast_mean_path(spec, params, path, panel, h,
                                             Xf, Zf, rng_seed=5,
                                             n_bias_paths=4000)
    n_sims = 30_000
    eta_mc, eta_paths = simulate_forward_eta(spec, params, path, panel, h,
                                             Xf, Zf, n_sims, seed=77)
    se = eta_paths.std(axis=0, ddof=1) / np.sqrt(n_sims)
    # earlier horizons have less spread; bound all with the widest SE
    for step in range(h):
        diff = np.abs(eta_hat[step] - eta_mc[step])
        assert np.all(diff <= 4 * np.maximum(se, 1e-8) + 1e-12), (step, diff,
                                                                  se)


class TestPredictiveDraws:
    def test_single_draw_is_one_dirichlet_sample(self, centered_spec,
                                                 small_panel):
        panel, params = small_panel
        theta = params.flatten()[None, :]
        y, alphas = forecast.predictive_draws(centered_spec, theta, panel,
                                              panel.T - 1, 1, 1, rng_seed=3)
        assert y.shape == (1, 1, 4)
        path = model.filter(centered_spec, params,
                            panel.slice(0, panel.T - 1))
        # the drawn shape parameters come from the one-step state
        Xf = panel.X[panel.T - 1:]
        Zf = panel.Z[panel.T - 1:]
        eta_hat, mu_hat = forecast.forecast_mean_path(
            centered_spec, params, path, panel.slice(0, panel.T - 1), 1,
            Xf, Zf)
        phi = float(np.exp(Zf[0] @ params.gamma))
        np.testing.assert_allclose(alphas[0, 0], phi * mu_hat[0], rtol=1e-10)

    def test_moment_oracle_one_step(self, centered_spec, small_panel):
        panel, params = small_panel
        theta = params.flatten()[None, :].repeat(1, axis=0)
        n = 30_000
        ys = []
        for chunk in range(3):
            y, _ = forecast.predictive_draws(
                centered_spec, np.repeat(theta, n // 3, axis=0), panel,
                panel.T - 1, 1, n // 3, rng_seed=chunk)
            ys.append(y[:, 0, :])
        y = np.concatenate(ys)
        path = model.filter(centered_spec, params, panel)
        mu_want = path.mu[panel.T - 1]
        se = y.std(axis=0, ddof=1) / np.sqrt(y.shape[0])
        assert np.all(np.abs(y.mean(axis=0) - mu_want) < 4 * se)

    def test_same_seed_same_draws(self, centered_spec, small_panel):
        panel, params = small_panel
        theta = np.repeat(params.flatten()[None, :], 50, axis=0)
        a, _ = forecast.predictive_draws(centered_spec, theta, panel, 80, 2,
                                         20, rng_seed=9)
        b, _ = forecast.predictive_draws(centered_spec, theta, panel, 80, 2,
                                         20, rng_seed=9)
        np.testing.assert_array_equal(a, b)

    def test_oversized_subsample_rejected(self, centered_spec, small_panel):
        panel, params = small_panel
        theta = np.repeat(params.flatten()[None, :], 10, axis=0)
        with pytest.raises(InvalidInput):
            forecast.predictive_draws(centered_spec, theta, panel, 80, 1,
                                      11, rng_seed=0)


class TestLpd:
    def test_single_draw_equals_log_density(self):
        y = np.array([0.2, 0.3, 0.5])
        mu = np.array([[0.25, 0.35, 0.40]])
        phi = np.array([40.0])
        want = dirichlet.log_density(y, phi[0] * mu[0])
        assert forecast.lpd(y, mu, phi) == pytest.approx(want, rel=1e-12)

    def test_duplicated_draws_collapse(self):
        y = np.array([0.2, 0.3, 0.5])
        mu = np.tile([0.25, 0.35, 0.40], (8, 1))
        phi = np.full(8, 40.0)
        single = forecast.lpd(y, mu[:1], phi[:1])
        assert forecast.lpd(y, mu, phi) == pytest.approx(single, rel=1e-13)

    def test_matches_naive_average(self):
        rng = np.random.default_rng(14)
        y = rng.dirichlet(np.ones(4))
        y = np.maximum(y, 1e-9)
        y /= y.sum()
        mu = rng.dirichlet(np.full(4, 3.0), size=64)
        phi = rng.uniform(20.0, 300.0, size=64)
        naive = np.log(np.mean([
            np.exp(sp.gammaln(phi[s]) - sp.gammaln(phi[s] * mu[s]).sum()
                   + ((phi[s] * mu[s] - 1) * np.log(y)).sum())
            for s in range(64)]))
        assert forecast.lpd(y, mu, phi) == pytest.approx(naive, abs=1e-10)

    def test_invariant_under_draw_permutation(self):
        rng = np.random.default_rng(15)
        y = np.array([0.3, 0.3, 0.4])
        mu = rng.dirichlet(np.ones(3), size=32)
        phi = rng.uniform(10.0, 80.0, 32)
        perm = rng.permutation(32)
        assert forecast.lpd(y, mu, phi) == pytest.approx(
            forecast.lpd(y, mu[perm], phi[perm]), rel=1e-14)


class TestCoverage:
    def test_median_point_is_covered(self):
        rng = np.random.default_rng(5)
        draws = rng.dirichlet(np.full(4, 30.0), size=500)
        y = np.quantile(draws, 0.5, axis=0)
        assert forecast.coverage_95(y, draws).all()

    def test_point_outside_range_is_not_covered(self):
        rng = np.random.default_rng(6)
        draws = rng.dirichlet(np.full(4, 30.0), size=500)
        y = draws[:, 0].max() + 0.1, 0.2, 0.2, 0.2
        covered = forecast.coverage_95(np.asarray(y), draws)
        assert not covered[0]

    def test_needs_enough_draws(self):
        with pytest.raises(InvalidInput):
            forecast.coverage_95(np.array([0.5, 0.5]), np.ones((10, 2)))


class TestPointErrors:
    def test_perfect_forecast_scores_zero(self):
        y = np.array([[0.2, 0.3, 0.5]])
        assert forecast.point_errors(y, y) == (0.0, 0.0)

    def test_closed_form_offset(self):
        c = 0.01
        truth = np.array([[0.25, 0.25, 0.25, 0.25]])
        pred = truth + np.array([[c, -c, 0.0, 0.0]])
        rmse, mae = forecast.point_errors(pred, truth)
        assert rmse == pytest.approx(c / np.sqrt(2.0), rel=1e-12)
        assert mae == pytest.approx(c / 2.0, rel=1e-12)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(30)
        pred = rng.random((7, 4))
        truth = rng.random((7, 4))
        sq, ab, n = 0.0, 0.0, 0
        for t in range(7):
            for j in range(4):
                d = pred[t, j] - truth[t, j]
                sq += d * d
                ab += abs(d)
                n += 1
        rmse, mae = forecast.point_errors(pred, truth)
        assert rmse == pytest.approx(np.sqrt(sq / n), rel=1e-12)
        assert mae == pytest.approx(ab / n, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidInput):
            forecast.point_errors(np.ones((2, 3)), np.ones((3, 3)))


def test_elpd_is_additive_and_result_serializes(tmp_path, centered_spec,
                                                small_panel):
    panel, params = small_panel
    theta = np.repeat(params.flatten()[None, :], 60, axis=0)
    res = forecast.forecast(centered_spec, theta, panel, panel.T - 2, 2, 50,
                            rng_seed=3, y_true=panel.Y[panel.T - 2:])
    assert res.lpd.shape == (2,)
    assert np.all(res.interval_lo <= res.interval_hi)
    assert np.all(res.mu_mean > 0)
    np.testing.assert_allclose(res.mu_mean.sum(axis=1), 1.0, atol=1e-9)
    path = forecast.save_forecast_csv(res, tmp_path / "fc.csv")
    assert path.exists()
    sp_panel = forecast.ScorePanel(float(np.sum(res.lpd)),
                                   [float(v) for v in res.lpd], 0.95,
                                   0.001, 0.0005)
    assert sp_panel.elpd_sum == pytest.approx(
        float(np.sum(np.asarray(sp_panel.lpd_t))), abs=1e-10)
    out = forecast.save_scores_json({"centered": sp_panel},
                                    tmp_path / "scores.json")
    assert out.exists()
