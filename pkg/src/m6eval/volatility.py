"""Range-based daily variance estimators and the HEXP variance forecasting regression.

Everything is in daily-variance units; annualize only when reporting.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.linalg import qr
from scipy.signal import lfilter

COMS = (1, 5, 25, 125)
REGRESSORS = ("exp1", "exp5", "exp25", "exp125", "glrv")
VARIANCE_FLOOR = 1e-10
_FOUR_LN2 = 4.0 * math.log(2.0)


class HexpFitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Estimators on log components


def parkinson_var(u, d) -> float:
    u, d = np.asarray(u, float), np.asarray(d, float)
    return float(np.mean((u - d) ** 2) / _FOUR_LN2)


def rogers_satchell_var(u, d, c) -> float:
    u, d, c = (np.asarray(x, float) for x in (u, d, c))
    return float(np.mean(u * (u - c) + d * (d - c)))


def garman_klass_var(o, u, d, c):
    """One-day Garman-Klass variance; elementwise over arrays, clamped at zero."""
    o, u, d, c = (np.asarray(x, float) for x in (o, u, d, c))
    vp = (u - d) ** 2 / _FOUR_LN2
    vrs = u * (u - c) + d * (d - c)
    raw = o ** 2 - 0.383 * c ** 2 + 1.364 * vp + 0.019 * vrs
    out = np.maximum(raw, 0.0)
    return float(out) if out.ndim == 0 else out


def yang_zhang_k(T: int) -> float:
    return 0.34 / (1.34 + (T + 1) / (T - 1))


def yang_zhang_var(o, u, d, c) -> float:
    """Drift-robust variance over a window of T >= 2 days."""
    o, u, d, c = (np.asarray(x, float) for x in (o, u, d, c))
    T = len(o)
    if T < 2:
        raise ValueError("Yang-Zhang needs T >= 2")
    k = yang_zhang_k(T)
    v_o = np.sum((o - o.mean()) ** 2) / (T - 1)
    v_c = np.sum((c - c.mean()) ** 2) / (T - 1)
    v_rs = np.mean(u * (u - c) + d * (d - c))
    return float(v_o + k * v_c + (1 - k) * v_rs)


def ewm_lambda(com: float) -> float:
    return math.log(1.0 + 1.0 / com)


def exp_rv(daily_var: Sequence[float], com: float) -> float:
    """Exponentially weighted mean of a variance series (last element most recent).

    Weights ``exp(-lambda * age)`` are renormalized over the available history.
    """
    x = np.asarray(daily_var, float)
    if len(x) == 0:
        raise ValueError("empty series")
    age = np.arange(len(x))[::-1]
    w = np.exp(-ewm_lambda(com) * age)
    return float(w @ x / w.sum())


# ---------------------------------------------------------------------------
# Panel paths (dates x assets arrays, NaN before an asset's first observation)


def exp_rv_path(x: np.ndarray, com: float) -> np.ndarray:
    """Running :func:`exp_rv` at every date, over all history up to that date."""
    x = np.asarray(x, float)
    a = math.exp(-ewm_lambda(com))
    valid = np.isfinite(x)
    num = lfilter([1.0], [1.0, -a], np.where(valid, x, 0.0), axis=0)
    den = lfilter([1.0], [1.0, -a], valid.astype(float), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[den == 0] = np.nan
    return out


def long_run_path(o, u, d, c) -> tuple[np.ndarray, np.ndarray]:
    """Expanding-window Yang-Zhang variance from each asset's first observation.

    Returns (variance, observation count); variance is NaN until two days exist.
    """
    o, u, d, c = (np.asarray(x, float) for x in (o, u, d, c))
    valid = np.isfinite(o) & np.isfinite(u) & np.isfinite(d) & np.isfinite(c)
    z = lambda a: np.where(valid, a, 0.0)
    n = np.cumsum(valid, axis=0).astype(float)
    so, so2 = np.cumsum(z(o), axis=0), np.cumsum(z(o) ** 2, axis=0)
    sc, sc2 = np.cumsum(z(c), axis=0), np.cumsum(z(c) ** 2, axis=0)
    srs = np.cumsum(z(u * (u - c) + d * (d - c)), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        v_o = (so2 - so ** 2 / n) / (n - 1)
        v_c = (sc2 - sc ** 2 / n) / (n - 1)
        v_rs = srs / n
        k = 0.34 / (1.34 + (n + 1) / (n - 1))
        v = v_o + k * v_c + (1 - k) * v_rs
    v[n < 2] = np.nan
    return np.maximum(v, 0.0), n


def forward_yang_zhang(o, u, d, c, h: int) -> np.ndarray:
    """Row t holds the Yang-Zhang variance over days t+1 .. t+h (NaN if incomplete)."""
    o, u, d, c = (np.asarray(x, float) for x in (o, u, d, c))
    T = o.shape[0]
    rs = u * (u - c) + d * (d - c)
    valid = np.isfinite(o) & np.isfinite(c) & np.isfinite(rs)

    def wsum(a):
        a = np.where(valid, a, 0.0)
        cs = np.vstack([np.zeros((1,) + a.shape[1:]), np.cumsum(a, axis=0)])
        out = np.full(a.shape, np.nan)
        out[: T - h] = cs[h + 1: T + 1] - cs[1: T - h + 1]
        return out

    n = wsum(np.ones_like(o))
    so, so2, sc, sc2, srs = wsum(o), wsum(o ** 2), wsum(c), wsum(c ** 2), wsum(rs)
    k = yang_zhang_k(h)
    v_o = (so2 - so ** 2 / h) / (h - 1)
    v_c = (sc2 - sc ** 2 / h) / (h - 1)
    out = v_o + k * v_c + (1 - k) * srs / h
    out[n != h] = np.nan
    return out


def global_rv(exp5: np.ndarray, long_run: np.ndarray) -> np.ndarray:
    """Universe-average scaled ExpRV(5), rescaled to each asset's long-run level.

    At each date the ratio ExpRV5 / RV_LR is averaged over the assets that have
    both values, then multiplied back by each asset's own RV_LR.
    """
    exp5, long_run = np.asarray(exp5, float), np.asarray(long_run, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(long_run > 0, exp5 / long_run, np.nan)
    ok = np.isfinite(ratio)
    cnt = ok.sum(axis=-1, keepdims=True)
    mean_ratio = np.where(cnt > 0, np.where(ok, ratio, 0.0).sum(axis=-1, keepdims=True) / np.maximum(cnt, 1), np.nan)
    return mean_ratio * long_run


@dataclass(frozen=True)
class VarianceFeatures:
    asset_id: str
    date: object
    exp_rv: tuple[float, float, float, float]
    global_rv: float
    long_run_rv: float

    def regressors(self) -> np.ndarray:
        return np.array(list(self.exp_rv) + [self.global_rv]) - self.long_run_rv


@dataclass
class FeaturePanel:
    """HEXP inputs for a whole universe; every frame is dates x tickers."""

    components: dict[str, pd.DataFrame]
    gk: pd.DataFrame
    exp: dict[int, pd.DataFrame]
    glrv: pd.DataFrame
    long_run: pd.DataFrame
    n_obs: pd.DataFrame

    @property
    def index(self) -> pd.DatetimeIndex:
        return self.gk.index

    @property
    def tickers(self) -> list[str]:
        return list(self.gk.columns)

    def regressor_stack(self) -> np.ndarray:
        """(dates, assets, 5) regressors already demeaned by the long-run variance."""
        lr = self.long_run.to_numpy()
        cols = [self.exp[k].to_numpy() for k in COMS] + [self.glrv.to_numpy()]
        return np.stack([x - lr for x in cols], axis=-1)

    def at(self, asset_id: str, when) -> VarianceFeatures:
        when = pd.Timestamp(when)
        return VarianceFeatures(asset_id, when,
                                tuple(float(self.exp[k].at[when, asset_id]) for k in COMS),
                                float(self.glrv.at[when, asset_id]),
                                float(self.long_run.at[when, asset_id]))


def build_features(components: dict[str, pd.DataFrame]) -> FeaturePanel:
    """Daily GK variance, ExpRV at each center of mass, global factor and long-run YZ."""
    idx, cols = components["o"].index, components["o"].columns
    o, u, d, c = (components[k].to_numpy(float) for k in "oudc")
    gk = garman_klass_var(o, u, d, c)
    gk = np.where(np.isfinite(o) & np.isfinite(c), gk, np.nan)
    exp = {k: exp_rv_path(gk, k) for k in COMS}
    lr, n = long_run_path(o, u, d, c)
    gl = global_rv(exp[5], lr)
    frame = lambda a: pd.DataFrame(a, index=idx, columns=cols)
    return FeaturePanel(components, frame(gk), {k: frame(v) for k, v in exp.items()}, frame(gl),
                        frame(lr), frame(n))


def realized_target(panel: FeaturePanel, horizon: int) -> np.ndarray:
    """Row t: GK of day t+1 (h=1) or Yang-Zhang over t+1..t+h (h>1)."""
    if horizon == 1:
        gk = panel.gk.to_numpy()
        out = np.full(gk.shape, np.nan)
        out[:-1] = gk[1:]
        return out
    o, u, d, c = (panel.components[k].to_numpy(float) for k in "oudc")
    return forward_yang_zhang(o, u, d, c, horizon)


# ---------------------------------------------------------------------------
# Regression


@dataclass(frozen=True)
class HexpModel:
    horizon_days: int
    kappa: tuple[float, float, float, float, float]
    fit_date: str | None = None
    n_obs: int = 0
    residual_variance: float = math.nan
    stderr: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.horizon_days not in (1, 20):
            raise ValueError("horizon must be 1 or 20")

    def to_dict(self) -> dict:
        return {"horizon": self.horizon_days, "kappa": list(self.kappa), "fit_date": self.fit_date,
                "n_obs": self.n_obs}

    @classmethod
    def from_dict(cls, d: dict) -> "HexpModel":
        return cls(int(d["horizon"]), tuple(float(k) for k in d["kappa"]), d.get("fit_date"),
                   int(d.get("n_obs", 0)))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def hexp_design(panel: FeaturePanel, horizon: int, end: int | None = None,
                min_history: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (X, y) over all assets and all windows whose target is known by row ``end``.

    Windows step one day at a time and overlap for h > 1. Rows need ``min_history``
    observed days before the feature date.
    """
    X = panel.regressor_stack()
    target = realized_target(panel, horizon) - panel.long_run.to_numpy()
    T = X.shape[0]
    last = T if end is None else min(T, end + 1)
    usable = np.zeros(target.shape, bool)
    usable[: max(last - horizon, 0)] = True
    usable &= panel.n_obs.to_numpy() >= min_history
    usable &= np.isfinite(target) & np.all(np.isfinite(X), axis=-1)
    return X[usable], target[usable]


def fit_hexp(X: np.ndarray, y: np.ndarray, horizon: int, fit_date: str | None = None,
             min_obs: int = 50) -> HexpModel:
    """Least squares of the demeaned target on the five demeaned regressors, no intercept."""
    X, y = np.asarray(X, float), np.asarray(y, float)
    if len(y) < min_obs:
        raise HexpFitError(f"need at least {min_obs} stacked rows, got {len(y)}")
    scale = np.abs(X).max(axis=0)
    _, R, piv = qr(X / np.where(scale > 0, scale, 1.0), mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (diag[0] if diag[0] > 0 else 1.0)
    rank = int((diag > tol).sum()) if diag[0] > 0 else 0
    if rank < X.shape[1]:
        bad = sorted(REGRESSORS[i] for i in piv[rank:])
        raise HexpFitError(f"rank-deficient design; collinear columns: {', '.join(bad)}")
    kappa, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ kappa
    dof = max(len(y) - X.shape[1], 1)
    s2 = float(resid @ resid / dof)
    cov = s2 * np.linalg.inv(X.T @ X)
    return HexpModel(horizon, tuple(float(k) for k in kappa), fit_date, len(y), s2,
                     tuple(float(s) for s in np.sqrt(np.diag(cov))))


def fit_hexp_panel(panel: FeaturePanel, horizon: int, end: int | None = None,
                   min_history: int = 20) -> HexpModel:
    X, y = hexp_design(panel, horizon, end, min_history)
    last = panel.index[-1 if end is None else end]
    return fit_hexp(X, y, horizon, str(pd.Timestamp(last).date()))


def forecast_variance(model: HexpModel, features: VarianceFeatures, floor: float = VARIANCE_FLOOR) -> float:
    pred = features.long_run_rv + float(np.dot(model.kappa, features.regressors()))
    return max(pred, floor)


def forecast_panel(model: HexpModel, panel: FeaturePanel, floor: float = VARIANCE_FLOOR) -> pd.DataFrame:
    """Forecast made at each date (row t predicts the variance from t+1 onward)."""
    pred = panel.long_run.to_numpy() + panel.regressor_stack() @ np.asarray(model.kappa)
    pred = np.where(np.isfinite(pred), np.maximum(pred, floor), np.nan)
    return pd.DataFrame(pred, index=panel.index, columns=panel.gk.columns)
