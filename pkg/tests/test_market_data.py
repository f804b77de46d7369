import math

import numpy as np
import pandas as pd
import pytest

from m6eval import market_data as md


def _write(tmp_path, text):
    p = tmp_path / "prices.csv"
    p.write_text(text, encoding="utf-8")
    return p


HEADER = "date,ticker,open,high,low,close,adj_close\n"


def test_round_trip(tmp_path, small_prices):
    p = tmp_path / "p.csv"
    md.write_prices(small_prices, p)
    back = md.load_prices(p)
    assert sorted(back) == sorted(small_prices)
    for t, h in small_prices.items():
        np.testing.assert_array_equal(back[t].frame[list(md.PRICE_COLUMNS)].to_numpy(),
                                      h.frame[list(md.PRICE_COLUMNS)].to_numpy())
        assert "volume" in back[t].frame


def test_universe_filter_and_missing(tmp_path, small_prices, caplog):
    p = tmp_path / "p.csv"
    md.write_prices(small_prices, p)
    got = md.load_prices(p, ["T01", "NOPE"])
    assert list(got) == ["T01"]
    assert "NOPE" in caplog.text


def test_parse_errors_report_line(tmp_path):
    p = _write(tmp_path, HEADER + "2022-01-03,A,1,2,0.5,1.5,1.5\n2022-01-04,A,1,2,0.5\n")
    with pytest.raises(md.PriceParseError) as e:
        md.load_prices(p)
    assert e.value.line == 3
    with pytest.raises(md.PriceParseError):
        md.load_prices(_write(tmp_path, "day,ticker,open\n"))
    with pytest.raises(md.PriceParseError):
        md.load_prices(_write(tmp_path, HEADER + "2022-13-03,A,1,2,0.5,1.5,1.5\n"))


@pytest.mark.parametrize("row", [
    "2022-01-03,A,1,2,0.5,1.5,0",        # non-positive
    "2022-01-03,A,1,1.2,0.5,1.5,1.5",    # high below close
    "2022-01-03,A,1,2,1.2,1.5,1.5",      # low above open
    "2022-01-03,A,1,2,0.5,nan,1.5",      # non-finite
])
def test_bad_rows(tmp_path, row):
    with pytest.raises(md.PriceDataError):
        md.load_prices(_write(tmp_path, HEADER + row + "\n"))


def test_duplicate_dates(tmp_path):
    p = _write(tmp_path, HEADER + "2022-01-03,A,1,2,0.5,1.5,1.5\n2022-01-03,A,1,2,0.5,1.5,1.5\n")
    with pytest.raises(md.PriceDataError, match="duplicate"):
        md.load_prices(p)


def _hist(ticker, days, closes):
    c = np.asarray(closes, float)
    f = pd.DataFrame({"open": c, "high": c * 1.01, "low": c * 0.99, "close": c, "adj_close": c},
                     index=pd.DatetimeIndex(days))
    return md.PriceHistory(ticker, f)


def test_forward_fill_gives_zero_returns_and_keeps_start():
    a = _hist("A", ["2022-01-03", "2022-01-04", "2022-01-05", "2022-01-06"], [10, 11, 12, 13])
    b = _hist("B", ["2022-01-04", "2022-01-06"], [5, 6])
    al = md.align({"A": a, "B": b})
    fb = al["B"]
    assert list(fb.calendar.strftime("%m-%d")) == ["01-04", "01-05", "01-06"]
    assert fb.filled.tolist() == [False, True, False]
    r = md.daily_returns(fb)
    assert r.iloc[0] == 0.0 and math.isclose(r.iloc[1], 0.2)
    comps = md.log_components(fb)
    assert (comps.iloc[0] == 0).all()


def test_log_components_values():
    f = pd.DataFrame({"open": [10.0, 11.0], "high": [10.5, 12.0], "low": [9.5, 10.5],
                      "close": [10.0, 11.5], "adj_close": [10.0, 11.5]},
                     index=pd.DatetimeIndex(["2022-01-03", "2022-01-04"]))
    comps = md.log_components(md.PriceHistory("X", f))
    row = comps.iloc[0]
    assert math.isclose(row["o"], math.log(11 / 10))
    assert math.isclose(row["u"], math.log(12 / 11))
    assert math.isclose(row["d"], math.log(10.5 / 11))
    assert math.isclose(row["c"], math.log(11.5 / 11))


def test_unsorted_calendar_rejected():
    f = pd.DataFrame({k: [1.0, 1.0] for k in md.PRICE_COLUMNS},
                     index=pd.DatetimeIndex(["2022-01-04", "2022-01-03"]))
    with pytest.raises(md.PriceDataError):
        md.PriceHistory("X", f)
