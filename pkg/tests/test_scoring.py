import math
from datetime import date

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from m6eval import scoring
from m6eval.submission import Submission

from conftest import make_submission


def rps_loop(f, q):
    """Direct transcription: mean over j of (sum_{i<=j} (q_i - f_i))^2."""
    total = 0.0
    for j in range(5):
        total += (sum(q[: j + 1]) - sum(f[: j + 1])) ** 2
    return total / 5


def test_rps_matches_loop(rng):
    f = rng.dirichlet(np.ones(5), size=200)
    q = np.eye(5)[rng.integers(0, 5, 200)]
    got = scoring.rps_matrix(f, q)
    want = [rps_loop(a, b) for a, b in zip(f, q)]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)


def test_rps_known_values():
    assert scoring.rps_asset([1, 0, 0, 0, 0], [1, 0, 0, 0, 0]) == 0.0
    assert scoring.rps_asset([1, 0, 0, 0, 0], [0, 0, 0, 0, 1]) == pytest.approx(0.8)
    # uniform forecast: (0.2^2 + 0.4^2 + 0.6^2 + 0.8^2) / 5 when the outcome is quintile 1
    assert scoring.rps_asset([0.2] * 5, [1, 0, 0, 0, 0]) == pytest.approx((0.04 + 0.16 + 0.36 + 0.64) / 5)


def test_quintiles_without_ties(rng):
    rets = dict(zip([f"A{i}" for i in range(100)], rng.permutation(100) / 1000))
    outs = scoring.quintile_outcomes(rets)
    counts = np.array([o.q for o in outs]).sum(axis=0)
    np.testing.assert_array_equal(counts, [20] * 5)
    worst = min(rets, key=rets.get)
    assert next(o for o in outs if o.asset_id == worst).rank_value == 1.0


def test_quintile_tie_straddling_boundary():
    # places counted from the top; a 4-way tie at places 18..21
    vals = np.arange(100, 0, -1).astype(float)
    vals[17:21] = 50.5 + 32
    rets = {f"A{i}": v for i, v in enumerate(vals)}
    outs = {o.asset_id: o for o in scoring.quintile_outcomes(rets)}
    for i in range(17, 21):
        assert outs[f"A{i}"].q == (0.0, 0.0, 0.0, 0.25, 0.75)
        assert outs[f"A{i}"].rank_value == 4.75
    np.testing.assert_allclose(np.array([o.q for o in outs.values()]).sum(axis=0), [20] * 5)


def test_quintile_errors():
    with pytest.raises(scoring.ScoringError):
        scoring.quintile_outcomes({"a": 0.1}, expected_count=100)
    with pytest.raises(scoring.ScoringError):
        scoring.quintile_outcomes({f"a{i}": math.nan for i in range(5)}, expected_count=None)


def test_information_ratio_by_hand():
    r = np.array([0.01, -0.02, 0.03, 0.0])
    res = scoring.information_ratio(r)
    mean = r.mean()
    sd = math.sqrt(sum((x - mean) ** 2 for x in r) / 3)
    assert res.ret == pytest.approx(0.02)
    assert res.sdp == pytest.approx(sd)
    assert res.ir == pytest.approx(0.02 / sd)
    assert res.ir_annualized == pytest.approx(mean / sd * math.sqrt(252))
    flat = scoring.information_ratio([0.0, 0.0, 0.0])
    assert math.isnan(flat.ir) and not flat.defined


def test_portfolio_returns():
    R = np.array([[0.1, -0.1], [0.0, 0.2]])
    w = np.array([0.5, -0.5])
    np.testing.assert_allclose(scoring.portfolio_log_returns(w, R), np.log1p([0.1, -0.1]))
    RET, ret = scoring.portfolio_daily_return({"a": 0.5, "b": -0.5}, {"a": 11, "b": 9}, {"a": 10, "b": 10})
    assert RET == pytest.approx(0.1) and ret == pytest.approx(math.log(1.1))
    with pytest.raises(scoring.ScoringError):
        scoring.portfolio_log_returns(np.array([-1.0, 0.0]), np.array([[1.5, 0.0]]))


def test_build_period_data_boundaries():
    days = pd.bdate_range("2022-01-03", "2022-01-21")
    rng = np.random.default_rng(3)
    adj = pd.DataFrame(np.exp(np.cumsum(rng.normal(0, 0.01, (len(days), 5)), axis=0)), index=days,
                       columns=list("ABCDE"))
    periods = [(0, date(2022, 1, 7), date(2022, 1, 14)), (1, date(2022, 1, 14), date(2022, 1, 21))]
    pdata = scoring.build_period_data(adj, periods, expected_count=5)
    assert pdata[0].dates[0] == date(2022, 1, 10) and pdata[0].dates[-1] == date(2022, 1, 13)
    total = adj.loc["2022-01-13"] / adj.loc["2022-01-07"] - 1
    np.testing.assert_allclose(pdata[0].period_returns, total.to_numpy())
    with pytest.raises(scoring.ScoringError):
        scoring.build_period_data(adj, [(0, date(2021, 1, 1), date(2021, 2, 1))], expected_count=5)


def _pdata(seed, period=1, n=10, days=15):
    rng = np.random.default_rng(seed)
    R = rng.normal(0.0005, 0.02, (days, n))
    dates = [date(2022, 1, 1)] * days
    return scoring.PeriodData.from_returns(period, [f"A{i}" for i in range(n)], dates, R)


def test_aggregate_concatenates_days():
    tick = [f"A{i}" for i in range(10)]
    p1, p2 = _pdata(1, 1), _pdata(2, 2)
    sub = make_submission("t", 1, tick, weights=np.linspace(-0.1, 0.1, 10))
    s1, s2 = scoring.score_period(sub, p1), scoring.score_period(sub.with_period(2), p2)
    rps, ir = scoring.aggregate([s1, s2])
    assert rps == pytest.approx((s1.rps + s2.rps) / 2)
    ref = scoring.information_ratio(np.concatenate([s1.daily_rets, s2.daily_rets]))
    assert ir.ir_annualized == ref.ir_annualized


def test_benchmark_is_uniform_equal_weight():
    b = scoring.benchmark_forecast([f"A{i}" for i in range(100)])
    assert np.all(b.prob_matrix() == 0.2) and np.all(b.weights() == 0.01)


def test_overall_rank_ties_and_nan():
    entries = scoring.overall_rank({"a": (0.15, 1.0), "b": (0.15, math.nan), "c": (0.20, 2.0), "d": (0.10, 0.5)})
    by = {e.team_id: e for e in entries}
    assert by["a"].rank_rps == by["b"].rank_rps == 2.5
    assert by["b"].rank_ir == 4.0 and by["c"].rank_ir == 1.0
    assert by["a"].overall == (2.5 + 2) / 2
    assert [e.team_id for e in entries] == sorted(by, key=lambda t: (by[t].overall, t))


def test_leaderboard_requires_all_periods(tmp_path):
    tick = [f"A{i}" for i in range(10)]
    p1, p2 = _pdata(1, 1), _pdata(2, 2)
    full = make_submission("full", 1, tick)
    part = make_submission("part", 1, tick)
    scores = {"full": [scoring.score_period(full, p1), scoring.score_period(full.with_period(2), p2)],
              "part": [scoring.score_period(part, p1)]}
    board = scoring.build_leaderboard(scores, [1, 2], "g")
    assert [e.team_id for e in board.entries] == ["full"]
    scoring.write_leaderboard_json(board, tmp_path / "b.json")
    scoring.write_leaderboard_csv(board, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().startswith("team_id,rps,ir,or")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5).filter(lambda x: sum(x) > 1e-3),
       st.integers(0, 4))
def test_rps_range_property(raw, k):
    f = np.array(raw) / sum(raw)
    q = np.eye(5)[k]
    v = scoring.rps_asset(f, q)
    assert -1e-15 <= v <= 0.8 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-0.05, 0.05), min_size=5, max_size=30))
def test_quintile_mass_property(vals):
    outs = scoring.quintile_outcomes({f"a{i}": v for i, v in enumerate(vals)}, expected_count=None)
    q = np.array([o.q for o in outs])
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(q.sum(axis=0).sum(), len(vals), atol=1e-9)
