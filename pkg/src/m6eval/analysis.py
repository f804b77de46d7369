"""Post-competition metrics: crowd combinations, forecast/investment connection,
calibration, strategy consistency, accuracy classes and concentration."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .scoring import PeriodData, aggregate, score_period
from .submission import Submission

WELL_CONNECTED = "WELL_CONNECTED"
CONNECTED = "CONNECTED"
WEAKLY_CONNECTED = "WEAKLY_CONNECTED"
DISCONNECTED = "DISCONNECTED"
OPPOSITE = "OPPOSITE"
NA = "NA"
CONNECTION_CLASSES = (WELL_CONNECTED, CONNECTED, WEAKLY_CONNECTED, DISCONNECTED, OPPOSITE, NA)

DEFAULT_FRACTIONS = tuple(round(0.05 * k, 2) for k in range(1, 21))


# ---------------------------------------------------------------------------
# Crowd combinations


def combine(subs: Sequence[Submission], mode: str = "both", team_id: str = "COMBINED") -> Submission:
    """Element-wise mean of forecasts and/or weights over submissions.

    ``mode`` is ``forecast``, ``weights`` or ``both``; the part that is not
    combined is taken from the benchmark (uniform 0.2 / equal weights).
    """
    if not subs:
        raise ValueError("nothing to combine")
    if mode not in ("forecast", "weights", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    order = subs[0].asset_ids
    if any(sorted(s.asset_ids) != sorted(order) for s in subs[1:]):
        raise ValueError("submissions cover different assets")
    n = len(order)
    if mode in ("forecast", "both"):
        probs = np.mean([s.prob_matrix(order) for s in subs], axis=0)
        probs = probs / probs.sum(axis=1, keepdims=True)
    else:
        probs = np.full((n, 5), 0.2)
    if mode in ("weights", "both"):
        weights = np.mean([s.weights(order) for s in subs], axis=0)
    else:
        weights = np.full(n, 1.0 / n)
    return Submission.from_arrays(team_id, subs[0].period_index, order, probs, weights)


def top_count(fraction: float, n: int) -> int:
    return max(1, int(math.floor(fraction * n + 1e-9)))


def top_fraction_combination_study(ranking: Sequence[str],
                                   submissions: Mapping[str, Mapping[int, Submission]],
                                   periods: Sequence[PeriodData],
                                   fractions: Sequence[float] = DEFAULT_FRACTIONS,
                                   mode: str = "both") -> pd.DataFrame:
    """Score the combination of the best ``fraction`` of teams for each fraction.

    ``ranking`` lists teams best first (by RPS, IR or OR, decided ex post).
    ``submissions[team][period]`` is the effective submission for that period.
    """
    rows = []
    for frac in fractions:
        k = top_count(frac, len(ranking))
        teams = list(ranking[:k])
        scores = []
        for pdata in periods:
            combo = combine([submissions[t][pdata.period_index] for t in teams], mode)
            scores.append(score_period(combo, pdata))
        rps, ir = aggregate(scores)
        rows.append({"fraction": frac, "n_teams": k, "rps": rps, "ir": ir.ir_annualized})
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Connection coefficient


@dataclass(frozen=True)
class ConnectionResult:
    team_id: str
    r_con: float
    klass: str
    mean_vector: tuple[float, ...]


def connection_class(r: float) -> str:
    if not math.isfinite(r):
        return NA
    if r >= 0.75:
        return WELL_CONNECTED
    if r >= 0.50:
        return CONNECTED
    if r >= 0.25:
        return WEAKLY_CONNECTED
    if r > -0.25:
        return DISCONNECTED
    return OPPOSITE


def connection_from_vector(vec, team_id: str = "") -> ConnectionResult:
    v = np.asarray(vec, float)
    if np.ptp(v) <= 1e-15 * max(1.0, np.abs(v).max()):
        return ConnectionResult(team_id, math.nan, NA, tuple(v))
    r = float(np.corrcoef(v, np.arange(1, 6))[0, 1])
    return ConnectionResult(team_id, r, connection_class(r), tuple(v))


def connection_coefficient(history: Sequence[Submission]) -> ConnectionResult:
    """Pearson r between (1..5) and the weight-times-probability vector averaged over assets and submissions.

    A constant mean vector (e.g. benchmark forecasts) has no defined correlation and is classed NA.
    """
    if not history:
        raise ValueError("empty submission history")
    parts = [s.weights()[:, None] * s.prob_matrix() for s in history]
    mean = np.concatenate(parts).mean(axis=0)
    return connection_from_vector(mean, history[0].team_id)


# ---------------------------------------------------------------------------
# Calibration


CAL_COLUMNS = ("bin_lo", "bin_mid", "mean_assessed", "relative_frequency", "count")


def calibration_curve(probs, outcomes, width: float = 0.05) -> pd.DataFrame:
    """Observed frequency per bin of assessed probability.

    ``probs`` and ``outcomes`` are aligned (..., 5) arrays; each (asset, quintile,
    period) cell is one observation, with fractional outcomes under ties. Bins are
    [k*width, (k+1)*width) except the last, which also holds 1.0. Empty bins are
    reported with NaN statistics and count 0.
    """
    p = np.asarray(probs, float).ravel()
    q = np.asarray(outcomes, float).ravel()
    if p.shape != q.shape:
        raise ValueError("forecasts and outcomes are not aligned")
    nbins = int(round(1.0 / width))
    idx = np.clip(np.floor(p / width + 1e-9).astype(int), 0, nbins - 1)
    count = np.bincount(idx, minlength=nbins)
    psum = np.bincount(idx, weights=p, minlength=nbins)
    qsum = np.bincount(idx, weights=q, minlength=nbins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_p = np.where(count > 0, psum / count, np.nan)
        freq = np.where(count > 0, qsum / count, np.nan)
    lo = np.arange(nbins) * width
    return pd.DataFrame({"bin_lo": lo, "bin_mid": lo + width / 2, "mean_assessed": mean_p,
                         "relative_frequency": freq, "count": count})


# ---------------------------------------------------------------------------
# Strategy profile


@dataclass(frozen=True)
class StrategyProfile:
    exposure_class: str
    diversification_class: str
    weight_range_class: str
    directionality: str

    def labels(self) -> tuple[str, str, str, str]:
        return (self.exposure_class, self.diversification_class, self.weight_range_class, self.directionality)


def strategy_profile(sub: Submission) -> StrategyProfile:
    w = sub.weights()
    gross = float(np.abs(w).sum())
    exposure = "LOW" if gross < 0.5 else ("MODERATE" if gross < 0.8 else "HIGH")
    nz = w[w != 0]
    n = len(nz)
    diversification = "LOW" if n < 10 else ("MODERATE" if n < 80 else "HIGH")
    # spread of invested weights relative to the gross exposure
    spread = (nz.max() - nz.min()) / gross if n and gross > 0 else 0.0
    weight_range = "SMALL" if spread < 0.1 else "LARGE"
    directional = "DIRECTIONAL" if n and (np.all(nz > 0) or np.all(nz < 0)) else "NON_DIRECTIONAL"
    return StrategyProfile(exposure, diversification, weight_range, directional)


def strategy_changes(history: Sequence[Submission]) -> int:
    """Number of consecutive effective submissions whose profile labels differ."""
    labels = [strategy_profile(s).labels() for s in history]
    return sum(a != b for a, b in zip(labels, labels[1:]))


# ---------------------------------------------------------------------------
# Accuracy and concentration


def accuracy_class(rps: float) -> str:
    if rps < 0.10:
        return "HIGH"
    if rps <= 0.22:
        return "MODERATE"
    return "LOW"


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    defined: bool


def weight_accuracy_correlation(abs_weights, asset_rps) -> CorrelationResult:
    """Pearson correlation of |weight| with per-asset RPS over all (asset, period) cells."""
    a = np.abs(np.asarray(abs_weights, float)).ravel()
    b = np.asarray(asset_rps, float).ravel()
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return CorrelationResult(0.0, False)
    return CorrelationResult(float(np.corrcoef(a, b)[0, 1]), True)


def concentration_metrics(sub: Submission) -> dict:
    w = np.abs(sub.weights())
    inv = w[w > 0]
    return {"n_invested": int(len(inv)), "mean_abs_weight": float(inv.mean()) if len(inv) else 0.0}
