"""Synthetic prices and submissions for demos and tests."""
from __future__ import annotations

from datetime import datetime
from typing import Sequence

import numpy as np
import pandas as pd

from .market_data import PriceHistory
from .submission import Submission


def simulate_prices(tickers: Sequence[str], start: str = "2015-01-01", end: str = "2023-03-31",
                    seed: int = 0, daily_vol=(0.008, 0.025), market_beta=(0.3, 1.2),
                    with_volume: bool = False) -> dict[str, PriceHistory]:
    """One-factor log-normal daily bars on business days with consistent OHLC."""
    rng = np.random.default_rng(seed)
    days = pd.bdate_range(start, end)
    T, N = len(days), len(tickers)
    sig = rng.uniform(*daily_vol, N)
    beta = rng.uniform(*market_beta, N)
    # slowly varying volatility regime shared by all assets
    regime = np.exp(0.35 * np.convolve(rng.standard_normal(T + 59), np.ones(60) / np.sqrt(60), "valid"))
    mkt = 0.009 * regime * rng.standard_normal(T)
    idio = np.sqrt(np.maximum(sig ** 2 - (beta * 0.009) ** 2, (0.3 * sig) ** 2))
    total = mkt[:, None] * beta[None] + regime[:, None] * idio[None] * rng.standard_normal((T, N))
    overnight = 0.3 * total
    intraday = total - overnight
    close0 = rng.uniform(20, 200, N)
    log_close = np.log(close0) + np.cumsum(total, axis=0)
    log_open = log_close - intraday
    spread = np.abs(rng.standard_normal((T, N))) * 0.5 * sig * regime[:, None]
    spread2 = np.abs(rng.standard_normal((T, N))) * 0.5 * sig * regime[:, None]
    high = np.maximum(log_open, log_close) + spread
    low = np.minimum(log_open, log_close) - spread2
    out = {}
    for i, t in enumerate(tickers):
        frame = pd.DataFrame({"open": np.exp(log_open[:, i]), "high": np.exp(high[:, i]),
                              "low": np.exp(low[:, i]), "close": np.exp(log_close[:, i])}, index=days)
        frame["adj_close"] = frame["close"]
        if with_volume:
            frame["volume"] = np.round(rng.lognormal(13, 0.4, T))
        frame.index.name = "date"
        out[t] = PriceHistory(t, frame)
    return out


def random_submission(team_id: str, period_index: int, tickers: Sequence[str], rng: np.random.Generator,
                      gross: float | None = None, submitted_at: datetime = datetime(1970, 1, 1)) -> Submission:
    """Dirichlet forecasts and random long/short weights with gross exposure in [0.25, 1]."""
    n = len(tickers)
    probs = rng.dirichlet(np.ones(5), size=n)
    w = rng.standard_normal(n) * (rng.random(n) < 0.5)
    if not np.any(w):
        w[0] = 1.0
    g = rng.uniform(0.3, 1.0) if gross is None else gross
    w = w / np.abs(w).sum() * g
    return Submission.from_arrays(team_id, period_index, list(tickers), probs, w, submitted_at)
