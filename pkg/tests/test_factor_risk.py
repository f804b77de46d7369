import math

import numpy as np
import pandas as pd
import pytest
from scipy.stats import multivariate_normal

from m6eval import factor_risk as fr
from m6eval import reference

from conftest import bekk_factor_panel


def test_packaged_factor_config():
    specs = fr.load_factor_specs()
    assert specs[0].name == "M6M" and specs[0].level == 1
    m6m = specs[0].weights
    assert set(m6m) == set(reference.etf_tickers())
    assert sum(m6m.values()) == pytest.approx(1.0)
    universe = set(reference.universe_tickers())
    assert all(set(s.weights) <= universe for s in specs)
    assert [s.level for s in specs] == sorted(s.level for s in specs)


def test_factor_config_parsing_errors():
    with pytest.raises(ValueError, match="level"):
        fr.parse_factor_config('[factors.X]\nlevel = 4\n[factors.X.weights]\n"A" = 1.0\n')
    with pytest.raises(ValueError, match="empty"):
        fr.parse_factor_config('[factors.X]\nlevel = 1\n[factors.X.weights]\n')


def test_bekk_filter_matches_loop(rng):
    s0 = np.array([[1.0, 0.3], [0.3, 2.0]])
    e = rng.normal(size=(50, 2))
    path = fr.bekk_filter(e[:, :, None] * e[:, None, :], s0, 0.05, 0.1)
    st = fr.BekkState.start(s0, 0.05, 0.1)
    for t in range(50):
        np.testing.assert_allclose(path[t], st.sigma_t, rtol=1e-12, atol=1e-15)
        st = fr.bekk_update(st, e[t])
    np.testing.assert_allclose(path[50], st.sigma_t, rtol=1e-12)


def test_bekk_scalar_and_missing():
    path = fr.bekk_filter(np.array([np.nan, 4.0]), 1.0, 0.5, 0.5)
    assert path.tolist() == [1.0, 1.0, 2.5]


@pytest.mark.parametrize("omega,gamma", [(-0.1, 0.0), (0.6, 0.5), (0.0, 1.1)])
def test_bekk_parameter_checks(omega, gamma):
    with pytest.raises(fr.BekkConfigError):
        fr.BekkState.start(np.eye(2), omega, gamma)
    with pytest.raises(fr.BekkConfigError):
        fr.bekk_filter(np.zeros((3, 2, 2)), np.eye(2), omega, gamma)


def test_fit_layer_constant_targets(rng):
    """With omega=1 the paths sit on their targets, so B_t is the OLS beta."""
    f = rng.normal(size=(400, 1))
    x = 0.7 * f + 0.5 * rng.normal(size=(400, 3))
    fit = fr.fit_layer(x, f, 1.0, 0.0, ["F"])
    fs = f[:, 0] / f[:, 0].std(ddof=1)
    for i in range(3):
        slope = np.polyfit(fs, x[:, i], 1)[0]
        np.testing.assert_allclose(fit.loadings[:, i, 0], slope, rtol=1e-10)
    np.testing.assert_allclose(fit.residuals, x - fit.loadings[:-1, :, 0] * fs[:, None], atol=1e-14)
    sr = fit.standardized_residuals()
    np.testing.assert_allclose(np.nanstd(sr, axis=0, ddof=1), 1.0)


def test_fit_layer_degenerate_factor():
    with pytest.raises(fr.FactorFitError, match="F0"):
        fr.fit_layer(np.ones((10, 2)), np.zeros((10, 1)), 0.01, 0.005, ["F0"])


def test_fit_standardized_recovers_one_factor_structure():
    rng = np.random.default_rng(4)
    z = pd.DataFrame(bekk_factor_panel(3000, 30, 10, 0.01, 0.005, rng), columns=[f"A{i}" for i in range(30)])
    spec = [fr.FactorSpec("MKT", 1, {f"A{i}": 0.1 for i in range(10)})]
    fit = fr.fit_standardized(z, spec, 0.01, 0.005)
    sigma = fit.loadings @ fit.factor_cov @ fit.loadings.T + np.diag(fit.specific_var)
    assert fit.loadings.shape == (30, 1) and np.all(fit.specific_var > 0)
    # unconditional variance of each standardized column is 1
    assert np.median(np.diag(sigma)) == pytest.approx(1.0, abs=0.35)


def _random_model(rng, N=6, K=3):
    return fr.FactorRiskModel("2022-01-01", [f"A{i}" for i in range(N)], [f"F{k}" for k in range(K)],
                              rng.normal(size=(N, K)), np.cov(rng.normal(size=(K, 50))),
                              rng.uniform(0.1, 1, N), rng.uniform(0.005, 0.03, N), 0.01, 0.005)


def test_model_covariance_and_io(tmp_path, rng):
    m = _random_model(rng)
    D = np.diag(m.vol_scale)
    want = D @ (m.loadings @ m.factor_cov @ m.loadings.T + np.diag(m.specific_var)) @ D
    np.testing.assert_allclose(m.covariance(), want, rtol=1e-12)
    m.save(tmp_path / "m.json")
    back = fr.FactorRiskModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.covariance(), m.covariance())
    m.export_matrix(tmp_path / "c.txt")
    lines = (tmp_path / "c.txt").read_text().splitlines()
    assert lines[0].startswith("# date=2022-01-01 n=6") and lines[1] == "# assets=" + ",".join(m.asset_ids)
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "c.txt"), m.covariance())
    sub = m.subset(["A4", "A1"])
    np.testing.assert_allclose(sub.covariance(), m.covariance()[np.ix_([4, 1], [4, 1])])


def test_model_rejects_bad_shapes(rng):
    with pytest.raises(ValueError):
        fr.FactorRiskModel("", ["a"], ["f"], np.ones((1, 1)), np.eye(2), np.ones(1), np.ones(1))
    with pytest.raises(ValueError):
        fr.FactorRiskModel("", ["a"], ["f"], np.ones((1, 1)), np.eye(1), -np.ones(1), np.ones(1))
    with pytest.raises(ValueError, match="entries"):
        fr.portfolio_variance(np.ones(3), _random_model(rng))


def test_psd_repair():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    fixed = fr.psd_repair(a)
    assert np.linalg.eigvalsh(fixed).min() >= -1e-12
    near = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-12]])
    assert fr.psd_repair(near) is not near and np.array_equal(fr.psd_repair(near), near)


def test_risk_decomposition_by_hand(rng):
    m = _random_model(rng)
    w = rng.normal(size=6)
    d = fr.risk_decomposition(w, m)
    e = (w * m.vol_scale) @ m.loadings
    F = m.factor_cov
    assert d.m6m_var == pytest.approx(e[0] ** 2 * F[0, 0])
    assert d.other_systematic_var == pytest.approx(sum(e[k] ** 2 * F[k, k] for k in (1, 2)))
    assert d.covariance_effect == pytest.approx(sum(e[i] * e[j] * F[i, j] for i in range(3) for j in range(3) if i != j))
    assert d.total == pytest.approx(fr.portfolio_variance(w, m), rel=1e-12)


def test_gaussian_loglik_matches_scipy(rng):
    A = rng.normal(size=(4, 4))
    sig = A @ A.T + np.eye(4)
    y = rng.normal(size=(7, 4))
    want = multivariate_normal(np.zeros(4), sig).logpdf(y).sum()
    assert fr.gaussian_loglik(y, sig) == pytest.approx(want, rel=1e-12)


def test_window_starts():
    idx = pd.bdate_range("2020-01-01", periods=1000)
    starts = fr.test_window_starts(idx, idx[899], 36, 20)
    assert starts[-1] + 20 == 900 and np.all(np.diff(starts) == 20) and len(starts) == 36
    with pytest.raises(fr.FactorFitError):
        fr.test_window_starts(idx, idx[100], 36, 20)


def test_grid_search_failures(caplog):
    rng = np.random.default_rng(1)
    z = pd.DataFrame(rng.normal(size=(300, 4)), columns=list("ABCD"))
    bad = [fr.FactorSpec("X", 1, {"ZZ": 1.0})]
    with pytest.raises(fr.FactorFitError, match="every grid cell"):
        fr.grid_search(z, bad, [200, 220], omegas=(0.01,), gammas=(0.005,))
    assert "failed" in caplog.text
    ok = fr.grid_search(z, [fr.FactorSpec("X", 1, {"A": 0.5, "B": 0.5})], [200, 220],
                        omegas=(0.01, 0.05), gammas=(0.005, 0.05, 0.99))
    assert ok.failed == [(0.05, 0.99)] and len(ok.loglik) == 5
    assert ok.loglik[(ok.omega, ok.gamma)] == max(ok.loglik.values())


def test_fit_from_prices(small_prices):
    tickers = sorted(small_prices)
    spec = [fr.FactorSpec("MKT", 1, {t: 1 / 4 for t in tickers[:4]}),
            fr.FactorSpec("SPREAD", 2, {tickers[4]: 1.0, tickers[5]: -1.0})]
    model, inputs = fr.fit_from_prices(small_prices, tickers, spec, 0.01, 0.005, "2020-06-30")
    assert model.date <= "2020-06-30" and model.factor_names == ["MKT", "SPREAD"]
    assert inputs.z.index[-1] <= pd.Timestamp("2020-06-30")
    vol = np.sqrt(np.diag(model.covariance()) * 252)
    assert np.all((vol > 0.03) & (vol < 1.5))
    np.testing.assert_allclose(model.vol_scale, inputs.vol20.iloc[-1].to_numpy())
    assert math.isfinite(fr.annualized_vol(np.full(8, 1 / 8), model))
