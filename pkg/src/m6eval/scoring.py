"""Realized quintile outcomes, RPS, portfolio returns, IR, OR and leaderboards."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .submission import Submission

TRADING_DAYS = 252
BENCHMARK_TEAM = "BENCHMARK"
_CUM = np.tril(np.ones((5, 5)))  # x @ _CUM.T gives cumulative sums


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class QuintileOutcome:
    asset_id: str
    rank_value: float
    q: tuple[float, float, float, float, float]


def quintile_outcomes(period_returns: Mapping[str, float] | pd.Series,
                      expected_count: int | None = 100) -> list[QuintileOutcome]:
    """Map realized period returns to quintile outcome vectors.

    Assets are placed in ascending order of return (position 1 = worst); position
    ``p`` of ``n`` falls in quintile ``ceil(5p/n)``. Assets tied on exactly the same
    return share the quintiles of the positions they jointly occupy, so a tie
    straddling a boundary gets fractional ``q`` and an averaged rank.
    """
    items = list(period_returns.items())
    n = len(items)
    if expected_count is not None and n != expected_count:
        raise ScoringError(f"expected {expected_count} assets, got {n}")
    if n < 5:
        raise ScoringError("need at least 5 assets")
    values = np.array([v for _, v in items], dtype=float)
    if not np.all(np.isfinite(values)):
        raise ScoringError("non-finite period return")
    order = np.argsort(values, kind="stable")
    quint_of_pos = np.ceil(5 * np.arange(1, n + 1) / n).astype(int)
    q = np.zeros((n, 5))
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and values[order[stop]] == values[order[start]]:
            stop += 1
        share = np.bincount(quint_of_pos[start:stop] - 1, minlength=5) / (stop - start)
        q[order[start:stop]] = share
        start = stop
    ks = np.arange(1, 6)
    return [QuintileOutcome(a, float(q[i] @ ks), tuple(float(x) for x in q[i]))
            for i, (a, _) in enumerate(items)]


def outcome_matrix(outcomes: Sequence[QuintileOutcome], order: Sequence[str] | None = None) -> np.ndarray:
    if order is None:
        return np.array([o.q for o in outcomes])
    by_id = {o.asset_id: o.q for o in outcomes}
    missing = [a for a in order if a not in by_id]
    if missing:
        raise ScoringError(f"no outcome for {missing[:5]}")
    return np.array([by_id[a] for a in order])


def rps_matrix(f: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise ranked probability score for (n, 5) forecasts and outcomes."""
    diff = (np.asarray(q, float) - np.asarray(f, float)) @ _CUM.T
    return (diff ** 2).sum(axis=-1) / 5.0


def rps_asset(f: Sequence[float], q: QuintileOutcome | Sequence[float]) -> float:
    qv = q.q if isinstance(q, QuintileOutcome) else q
    return float(rps_matrix(np.asarray(f, float)[None], np.asarray(qv, float)[None])[0])


def rps_period(sub: Submission, outcomes: Sequence[QuintileOutcome]) -> float:
    ids = sub.asset_ids
    return float(rps_matrix(sub.prob_matrix(), outcome_matrix(outcomes, ids)).mean())


def rps_overall(period_rps: Sequence[float]) -> float:
    if not len(period_rps):
        raise ScoringError("no periods")
    return float(np.mean(period_rps))


def portfolio_daily_return(weights: Mapping[str, float], prices_t: Mapping[str, float],
                           prices_prev: Mapping[str, float]) -> tuple[float, float]:
    """(RET_t, ret_t) for one day from adjusted closes on t and t-1."""
    RET = math.fsum(w * (prices_t[a] / prices_prev[a] - 1.0) for a, w in weights.items() if w != 0)
    if RET <= -1.0:
        raise ScoringError(f"daily portfolio return {RET} <= -1")
    return RET, math.log1p(RET)


def portfolio_log_returns(weights: np.ndarray, asset_returns: np.ndarray) -> np.ndarray:
    """Daily ret_t = ln(1 + sum_i w_i r_it) for a (days, assets) simple-return matrix."""
    RET = np.asarray(asset_returns, float) @ np.asarray(weights, float)
    if np.any(RET <= -1.0):
        raise ScoringError("daily portfolio return <= -1")
    return np.log1p(RET)


@dataclass(frozen=True)
class IRResult:
    ret: float
    sdp: float
    ir: float  # ret / sdp; NaN when sdp == 0
    ir_annualized: float  # mean daily ret / sdp * sqrt(252); NaN when undefined
    n_days: int

    @property
    def defined(self) -> bool:
        return not math.isnan(self.ir)


def information_ratio(daily_rets: Sequence[float]) -> IRResult:
    r = np.asarray(daily_rets, float)
    T = len(r)
    if T < 2:
        raise ScoringError("need at least 2 daily returns")
    ret = float(r.sum())
    varp = float(((r - ret / T) ** 2).sum() / (T - 1))
    sdp = math.sqrt(varp)
    if sdp == 0.0:
        return IRResult(ret, 0.0, math.nan, math.nan, T)
    return IRResult(ret, sdp, ret / sdp, ret / T / sdp * math.sqrt(TRADING_DAYS), T)


def benchmark_forecast(universe: Sequence[str], period_index: int = 0) -> Submission:
    n = len(universe)
    return Submission.from_arrays(BENCHMARK_TEAM, period_index, list(universe),
                                  np.full((n, 5), 0.2), np.full(n, 1.0 / n))


def benchmark_portfolio(universe: Sequence[str], period_index: int = 0) -> Submission:
    """Equal long weights with gross exposure 1 (0.01 each for 100 assets)."""
    return benchmark_forecast(universe, period_index)


# ---------------------------------------------------------------------------
# Period evaluation


@dataclass(frozen=True)
class PeriodData:
    """Everything needed to score any submission for one evaluation period."""

    period_index: int
    asset_ids: tuple[str, ...]
    dates: tuple[date, ...]  # trading days inside the period
    asset_returns: np.ndarray  # (days, assets) simple adjusted-close returns
    period_returns: np.ndarray  # (assets,) compounded return over the period
    outcomes: np.ndarray  # (assets, 5) quintile vectors

    @classmethod
    def from_returns(cls, period_index: int, asset_ids: Sequence[str], dates: Sequence[date],
                     asset_returns: np.ndarray, expected_count: int | None = None) -> "PeriodData":
        asset_returns = np.asarray(asset_returns, float)
        total = np.prod(1.0 + asset_returns, axis=0) - 1.0
        outs = quintile_outcomes(dict(zip(asset_ids, total)), expected_count)
        return cls(period_index, tuple(asset_ids), tuple(dates), asset_returns, total,
                   outcome_matrix(outs))


def build_period_data(adj_close: pd.DataFrame, periods: Sequence[tuple[int, date, date]],
                      expected_count: int | None = 100) -> list[PeriodData]:
    """Slice an adjusted-close panel (dates x tickers) into evaluation periods.

    A period covers the trading days strictly after its deadline and strictly
    before the next one; returns are measured from the last close on or before
    the deadline.
    """
    idx = pd.DatetimeIndex(adj_close.index)
    out = []
    for k, start, end in periods:
        before = idx[idx <= pd.Timestamp(start)]
        inside = idx[(idx > pd.Timestamp(start)) & (idx < pd.Timestamp(end))]
        if len(before) == 0:
            raise ScoringError(f"period {k}: no price on or before {start}")
        if len(inside) < 2:
            raise ScoringError(f"period {k}: fewer than 2 trading days between {start} and {end}")
        block = adj_close.loc[[before[-1]] + list(inside)]
        if block.isna().any().any():
            bad = block.columns[block.isna().any()].tolist()
            raise ScoringError(f"period {k}: missing prices for {bad[:5]}")
        values = block.to_numpy(float)
        rets = values[1:] / values[:-1] - 1.0
        out.append(PeriodData.from_returns(k, list(adj_close.columns), [d.date() for d in inside],
                                           rets, expected_count))
    return out


@dataclass(frozen=True)
class PeriodScore:
    team_id: str
    period_index: int
    rps: float
    ret: float
    sdp: float
    ir_annualized: float
    daily_rets: np.ndarray = field(repr=False, compare=False)
    asset_rps: np.ndarray = field(repr=False, compare=False)


def score_period(sub: Submission, data: PeriodData) -> PeriodScore:
    order = list(data.asset_ids)
    a_rps = rps_matrix(sub.prob_matrix(order), data.outcomes)
    rets = portfolio_log_returns(sub.weights(order), data.asset_returns)
    ir = information_ratio(rets)
    return PeriodScore(sub.team_id, data.period_index, float(a_rps.mean()), ir.ret, ir.sdp,
                       ir.ir_annualized, rets, a_rps)


def aggregate(scores: Sequence[PeriodScore]) -> tuple[float, IRResult]:
    """Multi-period RPS (mean of period means) and IR over the concatenated days."""
    rps = rps_overall([s.rps for s in scores])
    ir = information_ratio(np.concatenate([s.daily_rets for s in scores]))
    return rps, ir


# ---------------------------------------------------------------------------
# Ranking


def _rank_desc_nan_last(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    ranks = np.empty(len(x))
    ok = ~np.isnan(x)
    ranks[ok] = rankdata(-x[ok], method="average")
    n_ok = int(ok.sum())
    if (~ok).any():
        # undefined values share the average of the trailing ranks
        ranks[~ok] = (n_ok + 1 + len(x)) / 2.0
    return ranks


@dataclass
class LeaderboardEntry:
    team_id: str
    rps: float
    ir: float
    rank_rps: float = 0.0
    rank_ir: float = 0.0
    overall: float = 0.0
    rank_overall: float = 0.0
    per_period: list[PeriodScore] = field(default_factory=list, repr=False)


@dataclass
class Leaderboard:
    label: str
    periods: tuple[int, ...]
    entries: list[LeaderboardEntry]

    def by_team(self) -> dict[str, LeaderboardEntry]:
        return {e.team_id: e for e in self.entries}

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "periods": list(self.periods),
            "teams": [
                {
                    "team_id": e.team_id, "rps": e.rps, "ir": _nan_to_none(e.ir), "or": e.overall,
                    "rank_rps": e.rank_rps, "rank_ir": e.rank_ir, "rank_or": e.rank_overall,
                    "per_period": [
                        {"period": s.period_index, "rps": s.rps, "ret": s.ret, "sdp": s.sdp,
                         "ir": _nan_to_none(s.ir_annualized)}
                        for s in e.per_period
                    ],
                }
                for e in self.entries
            ],
        }


def _nan_to_none(x: float):
    return None if x is None or math.isnan(x) else x


def overall_rank(scores: Mapping[str, tuple[float, float]]) -> list[LeaderboardEntry]:
    """Rank teams on RPS (ascending) and IR (descending); OR is the mean of the two ranks.

    Ties get average ranks; an undefined IR (NaN) ranks below every defined IR.
    Entries come back sorted by OR, then team id.
    """
    teams = list(scores)
    rps = np.array([scores[t][0] for t in teams], float)
    ir = np.array([scores[t][1] for t in teams], float)
    r_rps = rankdata(rps, method="average")
    r_ir = _rank_desc_nan_last(ir)
    orank = (r_rps + r_ir) / 2.0
    r_or = rankdata(orank, method="average")
    entries = [LeaderboardEntry(t, float(rps[i]), float(ir[i]), float(r_rps[i]), float(r_ir[i]),
                                float(orank[i]), float(r_or[i])) for i, t in enumerate(teams)]
    entries.sort(key=lambda e: (e.overall, e.team_id))
    return entries


def build_leaderboard(period_scores: Mapping[str, Sequence[PeriodScore]], periods: Sequence[int],
                      label: str) -> Leaderboard:
    """Leaderboard over ``periods`` for teams scored in every one of them."""
    wanted = set(periods)
    table, kept = {}, {}
    for team, scores in period_scores.items():
        chosen = sorted((s for s in scores if s.period_index in wanted), key=lambda s: s.period_index)
        if {s.period_index for s in chosen} != wanted:
            continue
        rps, ir = aggregate(chosen)
        table[team] = (rps, ir.ir_annualized)
        kept[team] = chosen
    entries = overall_rank(table) if table else []
    for e in entries:
        e.per_period = kept[e.team_id]
    return Leaderboard(label, tuple(sorted(wanted)), entries)


def write_leaderboard_json(board: Leaderboard, path: str | Path) -> None:
    Path(path).write_text(json.dumps(board.to_dict(), indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _g12(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(x, ".12g")


def write_leaderboard_csv(board: Leaderboard, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["team_id", "rps", "ir", "or", "rank_rps", "rank_ir", "rank_or"])
        for e in board.entries:
            w.writerow([e.team_id, _g12(e.rps), _g12(e.ir), _g12(e.overall), _g12(e.rank_rps),
                        _g12(e.rank_ir), _g12(e.rank_overall)])
