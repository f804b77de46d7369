"""Stock universe construction: per-stock features, per-sector k-means, proportional sampling."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "avg_price_250", "price_cv_250", "price_cv_since", "avg_return_since", "sd_return_since",
    "total_return_250", "total_return_since", "avg_volume_250", "volume_cv_250",
)
WINDOW = 250
SINCE = date(2018, 1, 1)
MAX_K = 8


class InsufficientHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class StockFeatures:
    ticker: str
    values: tuple[float, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))


def _cv(x: np.ndarray) -> float:
    m = x.mean()
    return float(x.std(ddof=1) / m) if m != 0 else 0.0


def compute_features(ticker: str, close: pd.Series, volume: pd.Series, as_of,
                     since: date = SINCE, window: int = WINDOW, since_slack_days: int = 7) -> StockFeatures:
    """The nine selection features, with windows ending at ``as_of``.

    The "since" window starts at ``since``; the series must begin within
    ``since_slack_days`` of it.
    """
    as_of = pd.Timestamp(as_of)
    close = close.dropna().loc[:as_of]
    volume = volume.reindex(close.index)
    if len(close) < window:
        raise InsufficientHistoryError(f"{ticker}: {window}-day window needs {window} prices, got {len(close)}")
    if close.index[0] > pd.Timestamp(since) + pd.Timedelta(days=since_slack_days):
        raise InsufficientHistoryError(f"{ticker}: since-{since} window starts at {close.index[0].date()}")
    if volume.iloc[-window:].isna().any():
        raise InsufficientHistoryError(f"{ticker}: {window}-day volume window has gaps")
    p = close.to_numpy(float)
    p_since = close.loc[pd.Timestamp(since):].to_numpy(float)
    if len(p_since) < 2:
        raise InsufficientHistoryError(f"{ticker}: since-{since} window has fewer than 2 prices")
    r_since = p_since[1:] / p_since[:-1] - 1.0
    last = p[-window:]
    vol = volume.to_numpy(float)[-window:]
    vals = (
        float(last.mean()),
        _cv(last),
        _cv(p_since),
        float(r_since.mean()),
        float(r_since.std(ddof=1)) if len(r_since) > 1 else 0.0,
        float(last[-1] / last[0] - 1.0),
        float(p_since[-1] / p_since[0] - 1.0),
        float(vol.mean()),
        _cv(vol),
    )
    return StockFeatures(ticker, vals)


def standardize_features(x: np.ndarray) -> np.ndarray:
    """Column z-scores; constant columns become 0."""
    x = np.asarray(x, float)
    sd = x.std(axis=0, ddof=0)
    return np.where(sd > 0, (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0), 0.0)


@dataclass
class SectorClustering:
    sector: str
    tickers: list[str]
    labels: np.ndarray
    k: int
    silhouette: float = math.nan

    @property
    def sizes(self) -> list[int]:
        return [int((self.labels == c).sum()) for c in range(self.k)]

    def members(self, c: int) -> list[str]:
        return [t for t, lab in zip(self.tickers, self.labels) if lab == c]


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters in order of first appearance so output does not depend on k-means numbering."""
    mapping: dict[int, int] = {}
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping))
    return np.array([mapping[int(lab)] for lab in labels])


def cluster_sector(sector: str, tickers: Sequence[str], features: np.ndarray, seed: int = 0,
                   max_k: int = MAX_K) -> SectorClustering:
    """k-means on standardized features, k in 2..min(max_k, n-1) chosen by mean silhouette."""
    tickers = list(tickers)
    n = len(tickers)
    single = SectorClustering(sector, tickers, np.zeros(n, int), 1)
    if n < 3:
        return single
    z = standardize_features(features)
    n_distinct = len(np.unique(np.round(z, 12), axis=0))
    best = None
    for k in range(2, min(max_k, n - 1) + 1):
        if k > n_distinct:
            break
        km = KMeans(n_clusters=k, n_init=20, max_iter=300, random_state=seed).fit(z)
        if len(set(km.labels_)) < 2:
            continue
        s = float(silhouette_score(z, km.labels_))
        if best is None or s > best[0] + 1e-12:
            best = (s, k, km.labels_)
    if best is None:
        return single
    s, k, labels = best
    return SectorClustering(sector, tickers, _canonical(labels), k, s)


def apportion(sizes: Sequence[int], quota: int) -> list[int]:
    """Largest-remainder split of ``quota`` in proportion to ``sizes``.

    Remainder ties go to the larger cluster, then the lower index. Quotas larger
    than a cluster spill over to the next-largest cluster with room.
    """
    sizes = list(sizes)
    total = sum(sizes)
    if quota > total:
        raise ValueError(f"quota {quota} exceeds available stocks {total}")
    exact = [s * quota / total for s in sizes]
    out = [int(math.floor(e + 1e-12)) for e in exact]
    rem = [e - o for e, o in zip(exact, out)]
    order = sorted(range(len(sizes)), key=lambda i: (-round(rem[i], 12), -sizes[i], i))
    for i in order[: quota - sum(out)]:
        out[i] += 1
    by_size = sorted(range(len(sizes)), key=lambda i: (-sizes[i], i))
    for i in range(len(sizes)):
        excess = out[i] - sizes[i]
        if excess > 0:
            logger.warning("cluster %d quota %d exceeds its size %d; spilling over", i, out[i], sizes[i])
            out[i] = sizes[i]
            for j in by_size:
                room = sizes[j] - out[j]
                take = min(room, excess)
                out[j] += take
                excess -= take
                if not excess:
                    break
    return out


@dataclass
class UniverseSelection:
    stocks: list[str]
    per_sector: dict[str, list[str]] = field(default_factory=dict)
    clusterings: dict[str, SectorClustering] = field(default_factory=dict)
    quotas: dict[str, list[int]] = field(default_factory=dict)


def sample_universe(clusterings: Mapping[str, SectorClustering], plan: Mapping[str, tuple[int, int]],
                    seed: int = 0) -> UniverseSelection:
    """Draw each sector's quota uniformly without replacement inside its clusters."""
    rng = np.random.default_rng(seed)
    sel = UniverseSelection([])
    for sector in sorted(plan):
        quota = plan[sector][1]
        if sector not in clusterings:
            raise ValueError(f"no stocks supplied for sector {sector!r}")
        cl = clusterings[sector]
        q = apportion(cl.sizes, quota)
        picked = []
        for c, n in enumerate(q):
            if n:
                members = sorted(cl.members(c))
                picked += [str(t) for t in rng.choice(members, size=n, replace=False)]
        sel.per_sector[sector] = sorted(picked)
        sel.clusterings[sector] = cl
        sel.quotas[sector] = q
        sel.stocks += sorted(picked)
    return sel


def select_universe(features: pd.DataFrame, sectors: Mapping[str, str],
                    plan: Mapping[str, tuple[int, int]], seed: int = 0) -> UniverseSelection:
    """Cluster each sector's stocks on ``features`` (tickers x 9) and sample per the plan."""
    clusterings = {}
    for sector in sorted(plan):
        tickers = sorted(t for t in features.index if sectors.get(t) == sector)
        clusterings[sector] = cluster_sector(sector, tickers, features.loc[tickers].to_numpy(float), seed)
    return sample_universe(clusterings, plan, seed)
