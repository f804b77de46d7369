"""Daily price ingestion, calendar alignment and return primitives."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

PRICE_COLUMNS = ("open", "high", "low", "close", "adj_close")
PRICE_HEADER = ("date", "ticker") + PRICE_COLUMNS


class PriceParseError(ValueError):
    """Malformed row in a price file."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PriceDataError(ValueError):
    """Price values that violate the OHLC invariants."""


@dataclass(frozen=True)
class PriceHistory:
    """Daily OHLC + adjusted close for one asset.

    ``frame`` is indexed by ``datetime64`` dates (strictly increasing) and holds
    the columns in ``PRICE_COLUMNS`` plus an optional ``volume`` column.
    """

    asset_id: str
    frame: pd.DataFrame
    filled: np.ndarray | None = None  # True on rows created by forward_fill

    def __post_init__(self):
        if not self.frame.index.is_monotonic_increasing or self.frame.index.has_duplicates:
            raise PriceDataError(f"{self.asset_id}: calendar must be strictly increasing")

    @property
    def calendar(self) -> pd.DatetimeIndex:
        return self.frame.index

    @property
    def first_valid_date(self) -> pd.Timestamp:
        return self.frame.index[0]

    def __len__(self) -> int:
        return len(self.frame)

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy(dtype=float)


def check_row(ticker: str, day, o: float, h: float, l: float, c: float, adj: float) -> None:
    values = (o, h, l, c, adj)
    if not all(math.isfinite(v) for v in values):
        raise PriceDataError(f"{ticker} {day}: non-finite price")
    if min(values) <= 0:
        raise PriceDataError(f"{ticker} {day}: non-positive price")
    if h < max(o, c) or l > min(o, c) or l > h:
        raise PriceDataError(f"{ticker} {day}: high/low inconsistent with open/close")


def load_prices(source_path: str | Path, universe: Iterable[str] | None = None) -> dict[str, PriceHistory]:
    """Read a long-format price CSV into one :class:`PriceHistory` per ticker.

    Requested tickers absent from the file are logged and left out of the result.
    """
    wanted = None if universe is None else list(universe)
    rows: dict[str, list] = {}
    with open(source_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PriceParseError(1, "empty file") from None
        header = [h.strip().lower() for h in header]
        if tuple(header[: len(PRICE_HEADER)]) != PRICE_HEADER:
            raise PriceParseError(1, f"expected header {','.join(PRICE_HEADER)}")
        has_volume = len(header) > len(PRICE_HEADER) and header[len(PRICE_HEADER)] == "volume"
        width = len(PRICE_HEADER) + int(has_volume)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != width:
                raise PriceParseError(lineno, f"expected {width} fields, got {len(rec)}")
            try:
                day = date.fromisoformat(rec[0].strip())
                vals = [float(x) for x in rec[2:width]]
            except ValueError as exc:
                raise PriceParseError(lineno, str(exc)) from None
            ticker = rec[1].strip()
            if wanted is not None and ticker not in wanted:
                continue
            check_row(ticker, day, *vals[:5])
            rows.setdefault(ticker, []).append((day, *vals))

    columns = list(PRICE_COLUMNS) + (["volume"] if has_volume else [])
    out = {}
    for ticker in (wanted if wanted is not None else sorted(rows)):
        if ticker not in rows:
            logger.warning("ticker %s not present in %s", ticker, source_path)
            continue
        frame = pd.DataFrame(rows[ticker], columns=["date"] + columns)
        frame["date"] = pd.to_datetime(frame["date"])
        if frame["date"].duplicated().any():
            dup = frame.loc[frame["date"].duplicated(), "date"].iloc[0].date()
            raise PriceDataError(f"{ticker} {dup}: duplicate date")
        frame = frame.sort_values("date").set_index("date")
        out[ticker] = PriceHistory(ticker, frame)
    return out


def write_prices(histories: dict[str, PriceHistory], path: str | Path) -> None:
    with_volume = all("volume" in h.frame.columns for h in histories.values()) and histories
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_HEADER + (("volume",) if with_volume else ()))
        for ticker in sorted(histories):
            frame = histories[ticker].frame
            cols = list(PRICE_COLUMNS) + (["volume"] if with_volume else [])
            for day, vals in zip(frame.index, frame[cols].to_numpy()):
                w.writerow([day.date().isoformat(), ticker] + [repr(float(v)) for v in vals])


def universe_calendar(histories: dict[str, PriceHistory]) -> pd.DatetimeIndex:
    """Union of all dates seen across the universe."""
    idx = pd.DatetimeIndex([])
    for h in histories.values():
        idx = idx.union(h.calendar)
    return idx.sort_values()


def forward_fill(history: PriceHistory, calendar: pd.DatetimeIndex) -> PriceHistory:
    """Fill calendar gaps from the first observation onward with the last known row.

    Filled rows repeat all prices, so the day's return is exactly zero. Dates
    before ``first_valid_date`` stay absent.
    """
    if len(history) == 0:
        raise ValueError(f"{history.asset_id}: empty history")
    cal = calendar[calendar >= history.first_valid_date].union(history.calendar)
    frame = history.frame.reindex(cal)
    filled = frame["close"].isna().to_numpy()
    if history.filled is not None:
        filled |= pd.Series(history.filled, index=history.calendar).reindex(cal, fill_value=False).to_numpy()
    return PriceHistory(history.asset_id, frame.ffill(), filled)


def align(histories: dict[str, PriceHistory]) -> dict[str, PriceHistory]:
    cal = universe_calendar(histories)
    return {k: forward_fill(h, cal) for k, h in histories.items()}


def daily_returns(history: PriceHistory) -> pd.Series:
    """Simple adjusted-close returns, one shorter than the history."""
    if len(history) < 2:
        raise ValueError(f"{history.asset_id}: need at least 2 rows")
    adj = history.frame["adj_close"]
    return (adj / adj.shift(1) - 1.0).iloc[1:]


def log_components(history: PriceHistory) -> pd.DataFrame:
    """Per-day log components ``o, u, d, c`` (overnight, up, down, close vs open).

    The first row has no prior close and is dropped. Forward-filled days carry
    no trading information and get all-zero components.
    """
    if len(history) < 2:
        raise ValueError(f"{history.asset_id}: need at least 2 rows")
    f = history.frame
    if (f[["open", "high", "low", "close"]].to_numpy() <= 0).any():
        raise PriceDataError(f"{history.asset_id}: non-positive price")
    lo, lh, ll, lc = (np.log(f[k]) for k in ("open", "high", "low", "close"))
    comps = pd.DataFrame({"o": lo - lc.shift(1), "u": lh - lo, "d": ll - lo, "c": lc - lo})
    if history.filled is not None and history.filled.any():
        comps.loc[history.filled] = 0.0
    return comps.iloc[1:]


def price_panel(histories: dict[str, PriceHistory], field: str, tickers: list[str] | None = None,
                calendar: pd.DatetimeIndex | None = None) -> pd.DataFrame:
    """Dates x tickers frame for one price field (NaN where an asset has no data)."""
    tickers = list(histories) if tickers is None else tickers
    cal = universe_calendar(histories) if calendar is None else calendar
    return pd.DataFrame({t: histories[t].frame[field].reindex(cal) for t in tickers}, index=cal)


def component_panel(histories: dict[str, PriceHistory], tickers: list[str] | None = None,
                    calendar: pd.DatetimeIndex | None = None) -> dict[str, pd.DataFrame]:
    """Log components for every asset aligned on one calendar: {'o','u','d','c'} -> dates x tickers."""
    tickers = list(histories) if tickers is None else tickers
    cal = universe_calendar(histories) if calendar is None else calendar
    parts = {k: {} for k in "oudc"}
    for t in tickers:
        comps = log_components(histories[t])
        for k in "oudc":
            parts[k][t] = comps[k].reindex(cal)
    return {k: pd.DataFrame(v, index=cal)[tickers] for k, v in parts.items()}
