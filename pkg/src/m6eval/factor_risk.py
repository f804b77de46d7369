"""Hierarchical factor risk model with scalar covariance-targeted BEKK dynamics.

Returns are first standardized by their one-day variance forecasts. Three layers of
pre-specified factors are then peeled off in turn; each layer's asset/factor
covariances follow a scalar BEKK recursion around a long-run OLS target. The
final residuals get a BEKK specific variance, the pooled factors a BEKK
covariance shrunk to the identity, and the 20-day HEXP forecasts scale the
standardized covariance back to returns.
"""
from __future__ import annotations

import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.signal import lfilter

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import market_data as md
from . import reference
from . import volatility as vol

logger = logging.getLogger(__name__)

OMEGA_GRID = (0.03, 0.02, 0.01, 0.005)
GAMMA_GRID = (0.0025, 0.005, 0.0075)
PSD_TOL = 1e-10
TRADING_DAYS = 252


class BekkConfigError(ValueError):
    pass


class FactorFitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Factor definitions


@dataclass(frozen=True)
class FactorSpec:
    name: str
    level: int
    weights: Mapping[str, float]

    def __post_init__(self):
        if self.level not in (1, 2, 3):
            raise ValueError(f"{self.name}: level must be 1, 2 or 3")
        if not self.weights:
            raise ValueError(f"{self.name}: empty weight map")


def parse_factor_config(text: str) -> list[FactorSpec]:
    doc = tomllib.loads(text)
    specs = []
    for name, body in doc.get("factors", {}).items():
        specs.append(FactorSpec(name, int(body["level"]),
                                {str(k): float(v) for k, v in body["weights"].items()}))
    return sorted(specs, key=lambda s: s.level)  # stable: file order within a level


def load_factor_specs(path: str | Path | None = None) -> list[FactorSpec]:
    """Factor definitions from a TOML file, or the packaged defaults."""
    text = reference.default_factor_config() if path is None else Path(path).read_text(encoding="utf-8")
    return parse_factor_config(text)


def layers_of(specs: Sequence[FactorSpec]) -> list[list[FactorSpec]]:
    levels = sorted({s.level for s in specs})
    return [[s for s in specs if s.level == lv] for lv in levels]


# ---------------------------------------------------------------------------
# BEKK recursion


def _check_params(omega: float, gamma: float) -> None:
    if not (0.0 <= omega <= 1.0 and 0.0 <= gamma <= 1.0) or omega + gamma > 1.0 + 1e-15:
        raise BekkConfigError(f"need 0 <= omega, gamma and omega + gamma <= 1 (got {omega}, {gamma})")


@dataclass(frozen=True)
class BekkState:
    sigma0: np.ndarray
    sigma_t: np.ndarray
    omega: float
    gamma: float

    def __post_init__(self):
        _check_params(self.omega, self.gamma)

    @classmethod
    def start(cls, sigma0, omega: float, gamma: float) -> "BekkState":
        s0 = np.asarray(sigma0, float)
        return cls(s0, s0.copy(), omega, gamma)


def _outer(sigma0: np.ndarray, e) -> np.ndarray:
    e = np.asarray(e, float)
    return np.outer(e, e) if sigma0.ndim == 2 else e * e


def bekk_update(state: BekkState, error) -> BekkState:
    """sigma_t = omega*sigma0 + gamma*e e' + (1 - omega - gamma)*sigma_{t-1}."""
    beta = 1.0 - state.omega - state.gamma
    new = state.omega * state.sigma0 + state.gamma * _outer(state.sigma0, error) + beta * state.sigma_t
    if new.ndim == 2:
        new = 0.5 * (new + new.T)
    return BekkState(state.sigma0, new, state.omega, state.gamma)


def bekk_filter(products: np.ndarray, sigma0, omega: float, gamma: float,
                initial=None) -> np.ndarray:
    """Whole BEKK path for a stack of error products ``products[t]`` (e.g. e_t e_t').

    Returns an array one longer than ``products``: ``path[0]`` is the initial
    value (sigma0 by default) and ``path[t]`` is the covariance known after t
    observations, i.e. the forecast for row t. NaN products are replaced by
    sigma0 so missing days leave the path on its mean-reverting track.
    """
    _check_params(omega, gamma)
    products = np.asarray(products, float)
    T, shape = products.shape[0], products.shape[1:]
    s0 = np.broadcast_to(np.asarray(sigma0, float), shape).reshape(-1)
    init = s0 if initial is None else np.broadcast_to(np.asarray(initial, float), shape).reshape(-1)
    flat = products.reshape(T, -1)
    bad = ~np.isfinite(flat)
    if bad.any():
        flat = np.where(bad, s0[None, :], flat)
    beta = 1.0 - omega - gamma
    drive = omega * s0[None, :] + gamma * flat
    if T:
        y, _ = lfilter([1.0], [1.0, -beta], drive, axis=0, zi=(beta * init)[None, :])
    else:
        y = np.empty((0, flat.shape[1]))
    return np.vstack([init[None, :], y]).reshape((T + 1,) + shape)


# ---------------------------------------------------------------------------
# Standardization and layered fit


def standardize_returns(returns, one_day_vol):
    """z = r / sigma_hat elementwise (``one_day_vol`` is a standard deviation)."""
    return returns / one_day_vol


def factor_returns(panel: pd.DataFrame, specs: Sequence[FactorSpec]) -> pd.DataFrame:
    """Weighted combinations of panel columns, one column per spec (NaN if a constituent is missing)."""
    out = {}
    for s in specs:
        missing = [t for t in s.weights if t not in panel.columns]
        if missing:
            raise FactorFitError(f"factor {s.name}: tickers not in panel: {', '.join(missing)}")
        cols = list(s.weights)
        out[s.name] = panel[cols].to_numpy(float) @ np.array([s.weights[c] for c in cols])
    return pd.DataFrame(out, index=panel.index)


@dataclass
class LayerFit:
    names: list[str]
    factors: np.ndarray          # (T, K) standardized factor returns
    loadings: np.ndarray         # (T+1, N, K) path; loadings[t] applies to row t
    ols_betas: np.ndarray        # (N, K) long-run loadings
    residuals: np.ndarray        # (T, N) raw residuals x - B_t f_t
    res_mean: np.ndarray
    res_sd: np.ndarray

    def standardized_residuals(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (self.residuals - self.res_mean) / self.res_sd
        return np.where(self.res_sd > 0, out, np.where(np.isfinite(self.residuals), 0.0, np.nan))


def _masked_ols(x: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Slopes of each column of x on [1, F], using only that column's finite rows."""
    N, K = x.shape[1], F.shape[1]
    X = np.column_stack([np.ones(len(F)), F])
    valid = np.isfinite(x)
    full = valid.all(axis=0)
    betas = np.zeros((N, K))
    if full.any():
        coef, *_ = np.linalg.lstsq(X, x[:, full], rcond=None)
        betas[full] = coef[1:].T
    for i in np.flatnonzero(~full):
        rows = valid[:, i]
        if rows.sum() > K + 1:
            coef, *_ = np.linalg.lstsq(X[rows], x[rows, i], rcond=None)
            betas[i] = coef[1:]
    return betas


def fit_layer(x: np.ndarray, f: np.ndarray, omega: float, gamma: float,
              names: Sequence[str] | None = None) -> LayerFit:
    """One layer: BEKK asset/factor covariances around OLS targets, then residuals.

    ``x`` is (T, N) with NaN for missing observations; ``f`` is (T, K) raw factor
    returns, standardized here to unit sample sd.
    """
    x = np.asarray(x, float)
    f = np.asarray(f, float).reshape(len(x), -1)
    if not np.all(np.isfinite(f)):
        raise FactorFitError("factor returns contain missing values")
    sd = f.std(axis=0, ddof=1)
    if np.any(~(sd > 0)):
        bad = [names[i] if names else str(i) for i in np.flatnonzero(~(sd > 0))]
        raise FactorFitError(f"degenerate factor(s) with zero variance: {', '.join(bad)}")
    f = f / sd
    K = f.shape[1]
    S0 = np.cov(f, rowvar=False, ddof=1).reshape(K, K)
    betas = _masked_ols(x, f)
    C0 = betas @ S0
    cross = x[:, :, None] * f[:, None, :]
    cross = np.where(np.isfinite(cross), cross, C0[None])
    S = bekk_filter(f[:, :, None] * f[:, None, :], S0, omega, gamma)
    C = bekk_filter(cross, C0, omega, gamma)
    # B_t = C_t S_t^{-1}
    B = C / S if K == 1 else C @ np.linalg.inv(S)
    resid = x - np.einsum("tnk,tk->tn", B[:-1], f) if K > 1 else x - B[:-1, :, 0] * f
    mean = np.nanmean(resid, axis=0)
    rsd = np.nanstd(resid, axis=0, ddof=1)
    rsd = np.where(np.isfinite(rsd) & (rsd > 1e-12 * (1 + np.abs(mean))), rsd, 0.0)
    return LayerFit(list(names or range(K)), f, B, betas, resid, mean, rsd)


@dataclass
class StandardizedFit:
    factor_names: list[str]
    loadings: np.ndarray      # (N, K) effective loadings on the standardized panel
    factor_cov: np.ndarray    # (K, K)
    specific_var: np.ndarray  # (N,)


def fit_standardized(z: pd.DataFrame, specs: Sequence[FactorSpec], omega: float, gamma: float) -> StandardizedFit:
    """Run all layers on a standardized panel and return end-of-sample covariance pieces."""
    _check_params(omega, gamma)
    referenced = sorted({t for s in specs for t in s.weights})
    missing = [t for t in referenced if t not in z.columns]
    if missing:
        raise FactorFitError(f"factor constituents not in panel: {', '.join(missing[:5])}")
    rows =z[referenced].notna().all(axis=1).to_numpy()
    if rows.sum() < 3:
        raise FactorFitError("not enough dates with complete factor constituents")
    panel = z.loc[rows]
    x = panel.to_numpy(float)
    N = x.shape[1]
    scale = np.ones(N)
    blocks, all_f, names = [], [], []
    resid = None
    for layer in layers_of(specs):
        cur = pd.DataFrame(x, index=panel.index, columns=panel.columns)
        raw_f = factor_returns(cur, layer).to_numpy()
        fit = fit_layer(x, raw_f, omega, gamma, [s.name for s in layer])
        blocks.append(scale[:, None] * fit.loadings[-1])
        all_f.append(fit.factors)
        names += fit.names
        resid = fit.residuals
        x = fit.standardized_residuals()
        prev_scale = scale
        scale = scale * fit.res_sd
    F = np.hstack(all_f)
    K = F.shape[1]
    factor_cov = bekk_filter(F[:, :, None] * F[:, None, :], np.eye(K), omega, gamma)[-1]
    # the last layer's raw residual is only scaled by the earlier layers' sds
    v0 = np.nanvar(resid, axis=0, ddof=1)
    v0 = np.where(np.isfinite(v0), v0, 0.0)
    spec_path = bekk_filter(resid * resid, v0, omega, gamma)
    specific = prev_scale ** 2 * np.maximum(spec_path[-1], 0.0)
    return StandardizedFit(names, np.hstack(blocks), 0.5 * (factor_cov + factor_cov.T), specific)


# ---------------------------------------------------------------------------
# Assembled model


def psd_repair(sigma: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Clip negative eigenvalues to 0, but only if the smallest one is below -tol."""
    sigma = 0.5 * (sigma + sigma.T)
    vals, vecs = np.linalg.eigh(sigma)
    if vals.min() >= -tol:
        return sigma
    logger.info("PSD repair: min eigenvalue %.3g clipped", vals.min())
    fixed = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return 0.5 * (fixed + fixed.T)


@dataclass
class FactorRiskModel:
    """Snapshot of the risk model at one date. Covariances are daily."""

    date: str
    asset_ids: list[str]
    factor_names: list[str]
    loadings: np.ndarray
    factor_cov: np.ndarray
    specific_var: np.ndarray
    vol_scale: np.ndarray
    omega: float = math.nan
    gamma: float = math.nan
    _sigma: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.loadings = np.asarray(self.loadings, float)
        self.factor_cov = np.asarray(self.factor_cov, float)
        self.specific_var = np.asarray(self.specific_var, float)
        self.vol_scale = np.asarray(self.vol_scale, float)
        N, K = self.loadings.shape
        if self.factor_cov.shape != (K, K) or self.specific_var.shape != (N,) or self.vol_scale.shape != (N,):
            raise ValueError("inconsistent model dimensions")
        if np.any(self.specific_var < 0):
            raise ValueError("negative specific variance")

    def standardized_cov(self) -> np.ndarray:
        B = self.loadings
        return B @ self.factor_cov @ B.T + np.diag(self.specific_var)

    def raw_covariance(self) -> np.ndarray:
        d = self.vol_scale
        return d[:, None] * self.standardized_cov() * d[None, :]

    def covariance(self) -> np.ndarray:
        """Sigma = D (B Sigma_F B' + Omega) D with PSD repair."""
        if self._sigma is None:
            sigma = self.raw_covariance()
            if not np.all(np.isfinite(sigma)):
                raise FactorFitError("non-finite covariance entries")
            self._sigma = psd_repair(sigma)
        return self._sigma

    def subset(self, ids: Sequence[str]) -> "FactorRiskModel":
        idx = [self.asset_ids.index(a) for a in ids]
        return FactorRiskModel(self.date, list(ids), self.factor_names, self.loadings[idx], self.factor_cov,
                               self.specific_var[idx], self.vol_scale[idx], self.omega, self.gamma)

    def to_dict(self) -> dict:
        return {"date": self.date, "omega": self.omega, "gamma": self.gamma,
                "asset_ids": self.asset_ids, "factor_names": self.factor_names,
                "loadings": self.loadings.tolist(), "factor_cov": self.factor_cov.tolist(),
                "specific_var": self.specific_var.tolist(), "vol_scale": self.vol_scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FactorRiskModel":
        return cls(d["date"], list(d["asset_ids"]), list(d["factor_names"]), np.array(d["loadings"]),
                   np.array(d["factor_cov"]), np.array(d["specific_var"]), np.array(d["vol_scale"]),
                   float(d.get("omega", math.nan)), float(d.get("gamma", math.nan)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FactorRiskModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def export_matrix(self, path: str | Path) -> None:
        """Row-major covariance dump with a '#' metadata header."""
        sigma = self.covariance()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# date={self.date} n={len(self.asset_ids)} units=daily omega={self.omega} gamma={self.gamma}\n")
            fh.write("# assets=" + ",".join(self.asset_ids) + "\n")
            for row in sigma:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def fit_factor_model(z: pd.DataFrame, specs: Sequence[FactorSpec], omega: float, gamma: float,
                     vol_scale: pd.Series | np.ndarray, date: str = "") -> FactorRiskModel:
    """Fit the layered model on standardized returns; ``vol_scale`` is the 20-day sd forecast per asset."""
    fit = fit_standardized(z, specs, omega, gamma)
    vs = vol_scale.reindex(z.columns).to_numpy(float) if isinstance(vol_scale, pd.Series) else np.asarray(vol_scale, float)
    return FactorRiskModel(date, list(z.columns), fit.factor_names, fit.loadings, fit.factor_cov,
                           fit.specific_var, vs, omega, gamma)


def portfolio_variance(w, model: FactorRiskModel) -> float:
    w = np.asarray(w, float)
    if w.shape != (len(model.asset_ids),):
        raise ValueError(f"weight vector has {w.size} entries, model has {len(model.asset_ids)} assets")
    return float(w @ model.covariance() @ w)


def annualized_vol(w, model: FactorRiskModel) -> float:
    return math.sqrt(max(TRADING_DAYS * portfolio_variance(w, model), 0.0))


@dataclass(frozen=True)
class RiskDecomposition:
    total: float
    m6m_var: float
    other_systematic_var: float
    specific_var: float
    covariance_effect: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("total", "m6m_var", "other_systematic_var", "specific_var",
                                               "covariance_effect")}


def risk_decomposition(w, model: FactorRiskModel) -> RiskDecomposition:
    """Split w'Sigma w into market factor, other factors, specific and cross-factor terms.

    Uses the unrepaired covariance so the four parts add up exactly.
    """
    w = np.asarray(w, float)
    wd = w * model.vol_scale
    expo = wd @ model.loadings
    diag = np.diag(model.factor_cov)
    per_factor = expo ** 2 * diag
    total = float(wd @ model.standardized_cov() @ wd)
    m6m = float(per_factor[0])
    other = float(per_factor[1:].sum())
    spec = float(wd ** 2 @ model.specific_var)
    return RiskDecomposition(total, m6m, other, spec, total - m6m - other - spec)


# ---------------------------------------------------------------------------
# Grid search


def test_window_starts(index: pd.DatetimeIndex, end, n_windows: int = 36, length: int = 20) -> list[int]:
    """Row offsets of ``n_windows`` consecutive ``length``-day windows whose last day is on or before ``end``."""
    last = int(index.searchsorted(pd.Timestamp(end), side="right"))
    first = last - n_windows * length
    if first < 1:
        raise FactorFitError("not enough history for the requested test windows")
    return [first + k * length for k in range(n_windows)]


def gaussian_loglik(y: np.ndarray, sigma: np.ndarray) -> float:
    """Sum of zero-mean multivariate normal log densities of the rows of ``y``."""
    L = np.linalg.cholesky(sigma)
    sol = np.linalg.solve(L, y.T)
    n, k = y.shape
    return float(-0.5 * np.sum(sol ** 2) - n * np.log(np.diag(L)).sum() - 0.5 * n * k * math.log(2 * math.pi))


def window_loglik(z: pd.DataFrame, specs: Sequence[FactorSpec], omega: float, gamma: float,
                  starts: Iterable[int], length: int = 20, returns: pd.DataFrame | None = None,
                  vol_scale: pd.DataFrame | None = None) -> float:
    """Out-of-sample log-likelihood summed over test windows.

    The model is refit on rows before each window start and its covariance is held
    fixed for the whole window. With ``returns`` and ``vol_scale`` the density is for
    raw returns under D Sigma_z D; otherwise it is for the standardized panel itself.
    """
    total = 0.0
    for s in starts:
        fit = fit_standardized(z.iloc[:s], specs, omega, gamma)
        sig = fit.loadings @ fit.factor_cov @ fit.loadings.T + np.diag(fit.specific_var)
        y = (z if returns is None else returns).iloc[s:s + length]
        if returns is not None:
            d = vol_scale.iloc[s - 1].to_numpy(float)
            sig = d[:, None] * sig * d[None, :]
        keep = y.notna().all(axis=0).to_numpy()
        if returns is not None:
            keep &= np.isfinite(vol_scale.iloc[s - 1].to_numpy(float))
        total += gaussian_loglik(y.to_numpy(float)[:, keep], sig[np.ix_(keep, keep)])
    return total


@dataclass
class GridSearchResult:
    omega: float
    gamma: float
    loglik: dict[tuple[float, float], float]
    failed: list[tuple[float, float]]

    def to_dict(self) -> dict:
        return {"omega": self.omega, "gamma": self.gamma,
                "cells": [{"omega": o, "gamma": g, "loglik": v} for (o, g), v in self.loglik.items()],
                "failed": [{"omega": o, "gamma": g} for o, g in self.failed]}


def grid_search(z: pd.DataFrame, specs: Sequence[FactorSpec], starts: Sequence[int],
                omegas: Sequence[float] = OMEGA_GRID, gammas: Sequence[float] = GAMMA_GRID,
                length: int = 20, returns: pd.DataFrame | None = None,
                vol_scale: pd.DataFrame | None = None) -> GridSearchResult:
    """Pick (omega, gamma) maximizing the summed out-of-sample log-likelihood."""
    scores, failed = {}, []
    for o in omegas:
        for g in gammas:
            try:
                ll = window_loglik(z, specs, o, g, starts, length, returns, vol_scale)
            except (FactorFitError, BekkConfigError, np.linalg.LinAlgError) as exc:
                logger.warning("grid cell omega=%s gamma=%s failed: %s", o, g, exc)
                failed.append((o, g))
                continue
            logger.info("grid cell omega=%s gamma=%s loglik=%.6f", o, g, ll)
            scores[(o, g)] = ll
    if not scores:
        raise FactorFitError("every grid cell failed")
    best = max(scores, key=lambda k: scores[k])
    return GridSearchResult(best[0], best[1], scores, failed)


# ---------------------------------------------------------------------------
# Price-to-model pipeline


@dataclass
class RiskInputs:
    """Standardized returns and volatility forecasts derived from prices up to one date."""

    returns: pd.DataFrame
    z: pd.DataFrame
    vol20: pd.DataFrame          # daily sd forecast for the next 20 days, made at each date
    hexp1: vol.HexpModel
    hexp20: vol.HexpModel


def prepare_risk_inputs(histories, tickers: Sequence[str], as_of=None) -> RiskInputs:
    """HEXP fits on all history up to ``as_of`` and the standardized return panel."""
    aligned = md.align({t: histories[t] for t in tickers})
    cal = md.universe_calendar(aligned)
    if as_of is not None:
        cal = cal[cal <= pd.Timestamp(as_of)]
    comps = {k: v.loc[cal] for k, v in md.component_panel(aligned, list(tickers), cal).items()}
    panel = vol.build_features(comps)
    m1 = vol.fit_hexp_panel(panel, 1)
    m20 = vol.fit_hexp_panel(panel, 20)
    sigma1 = np.sqrt(vol.forecast_panel(m1, panel)).shift(1)
    adj = md.price_panel(aligned, "adj_close", list(tickers), cal)
    returns = adj / adj.shift(1) - 1.0
    z = standardize_returns(returns, sigma1)
    z = z.loc[z.notna().any(axis=1)]
    vol20 = np.sqrt(vol.forecast_panel(m20, panel))
    floored = int((vol20.iloc[-1] ** 2 <= vol.VARIANCE_FLOOR).sum())
    if floored:
        logger.warning("%d assets have 20-day variance forecasts at the floor on %s; "
                       "the HEXP history may be too short", floored, cal[-1].date())
    return RiskInputs(returns.loc[z.index], z, vol20.loc[z.index], m1, m20)


def fit_from_prices(histories, tickers: Sequence[str], specs: Sequence[FactorSpec], omega: float, gamma: float,
                    as_of=None) -> tuple[FactorRiskModel, RiskInputs]:
    inputs = prepare_risk_inputs(histories, tickers, as_of)
    date = str(inputs.z.index[-1].date())
    model = fit_factor_model(inputs.z, specs, omega, gamma, inputs.vol20.iloc[-1], date)
    return model, inputs
