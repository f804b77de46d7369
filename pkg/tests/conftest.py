from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from m6eval.submission import Submission


def make_submission(team: str, period: int, tickers, probs=None, weights=None, rng=None) -> Submission:
    n = len(tickers)
    rng = rng or np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(5), size=n) if probs is None else np.asarray(probs, float)
    weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    return Submission.from_arrays(team, period, list(tickers), probs, weights)


def bekk_factor_panel(T: int, N: int, n_etf: int, omega: float, gamma: float, rng) -> np.ndarray:
    """Standardized returns from a one-factor model whose covariances follow covariance-targeted BEKK.

    The factor is built so that the equal-weight average of the first ``n_etf``
    columns tracks it; loadings, factor variance and specific variances all
    mean-revert with the given (omega, gamma).
    """
    beta = 1 - omega - gamma
    b0 = rng.uniform(0.3, 0.9, N)
    b0[:n_etf] = rng.uniform(0.6, 1.0, n_etf)
    om0 = 1 - b0 ** 2
    S, C, Om = 1.0, b0.copy(), om0.copy()
    z = np.empty((T, N))
    for t in range(T):
        f = rng.standard_normal() * np.sqrt(S)
        eps = rng.standard_normal(N) * np.sqrt(Om)
        zt = C / S * f + eps
        z[t] = zt
        C = omega * b0 + gamma * zt * f + beta * C
        S = omega + gamma * f * f + beta * S
        Om = omega * om0 + gamma * eps ** 2 + beta * Om
    return z


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_prices():
    from m6eval.synthetic import simulate_prices
    tickers = [f"T{i:02d}" for i in range(8)]
    return simulate_prices(tickers, "2019-01-01", "2020-12-31", seed=7, with_volume=True)


def frame_of(hist):
    return pd.DataFrame({k: h.frame["adj_close"] for k, h in hist.items()})


# ---------------------------------------------------------------------------
# One summary line per acceptance criterion

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.when == "setup" and rep.skipped:
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
        _CRITERIA[n] = ("SKIP", title, reason)
    elif rep.when == "call":
        if hasattr(rep, "wasxfail"):
            status = "FAIL"  # known failure, recorded as expected
            detail = f"{detail} (expected failure: {rep.wasxfail})".strip()
        elif rep.skipped:
            status = "SKIP"
            detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else detail
        else:
            status = "PASS" if rep.passed else "FAIL"
        _CRITERIA[n] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        line = f"{status} criterion {n}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
