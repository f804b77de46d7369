"""Static competition data shipped with the package."""
from __future__ import annotations

import csv
from datetime import date
from functools import lru_cache
from importlib import resources


def _text(name: str) -> str:
    return resources.files("m6eval.data").joinpath(name).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def etf_tickers() -> tuple[str, ...]:
    return tuple(_text("etfs.txt").split())


@lru_cache(maxsize=None)
def stock_tickers() -> tuple[str, ...]:
    return tuple(_text("stocks.txt").split())


def universe_tickers() -> list[str]:
    """The 100 assets, sorted."""
    return sorted(etf_tickers() + stock_tickers())


@lru_cache(maxsize=None)
def sector_plan() -> dict[str, tuple[int, int]]:
    """sector -> (S&P 500 count, M6 count)."""
    rows = csv.DictReader(_text("sector_plan.csv").splitlines())
    return {r["sector"]: (int(r["sp500_count"]), int(r["m6_count"])) for r in rows}


def default_factor_config() -> str:
    return _text("factors.toml")


TRIAL_DEADLINE = date(2022, 2, 6)

# Submission deadlines (Sundays) for the 12 evaluation rounds, plus the close of round 12.
SUBMISSION_DEADLINES = (
    date(2022, 3, 6), date(2022, 4, 3), date(2022, 5, 1),
    date(2022, 5, 29), date(2022, 6, 26), date(2022, 7, 24),
    date(2022, 8, 21), date(2022, 9, 18), date(2022, 10, 16),
    date(2022, 11, 13), date(2022, 12, 11), date(2023, 1, 8),
)
FINAL_CLOSE = date(2023, 2, 5)


def default_periods() -> list[tuple[int, date, date]]:
    """(period_index, deadline, next deadline); period 0 is the trial round."""
    marks = (TRIAL_DEADLINE,) + SUBMISSION_DEADLINES + (FINAL_CLOSE,)
    return [(i, marks[i], marks[i + 1]) for i in range(len(marks) - 1)]


def quarter_of(period_index: int) -> int:
    return 0 if period_index == 0 else (period_index - 1) // 3 + 1
