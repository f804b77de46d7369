"""Forecast-to-portfolio studies: scores, linear-Bayes alphas, Sharpe optimization,
risk targeting, reverse optimization and realized-IC reporting."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.stats import rankdata, spearmanr

from .submission import GROSS_MAX, GROSS_MIN

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
IC_MENU = {"moderate": 0.05, "good": 0.10, "exceptional": 0.15}
SCORE_FALLBACK_SD = math.sqrt(2.0)  # population sd of {1, 2, 3, 4, 5}

OK = "OK"
FAILED = "FAILED"
INFEASIBLE_TARGET = "INFEASIBLE_TARGET"


class OptimizerInputError(ValueError):
    pass


@dataclass(frozen=True)
class AlphaVector:
    alpha: np.ndarray
    ic: float
    scores: np.ndarray


@dataclass
class OptimizedPortfolio:
    weights: np.ndarray
    ex_ante_vol: float
    objective_value: float
    solver_status: str
    constraint_set: str = "gross"
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.solver_status == OK


# ---------------------------------------------------------------------------
# Scores and alphas


def raw_scores(probs) -> np.ndarray:
    return np.asarray(probs, float) @ np.arange(1, 6)


def score_submission(probs) -> np.ndarray:
    """Expected quintile, standardized across assets (sqrt(2) divisor when flat)."""
    s = raw_scores(probs)
    centered = s - s.mean()
    sd = s.std(ddof=1) if len(s) > 1 else 0.0
    if not sd > 1e-12:
        sd = SCORE_FALLBACK_SD
    return centered / sd


def annualized_sigma(daily_var) -> np.ndarray:
    return np.sqrt(TRADING_DAYS * np.asarray(daily_var, float))


def linear_bayes_alpha(score, ic: float, sigma_annual) -> np.ndarray:
    """alpha = IC * volatility * score (zero prior)."""
    if not -1.0 <= ic <= 1.0:
        raise ValueError("ic must be in [-1, 1]")
    return ic * np.asarray(sigma_annual, float) * np.asarray(score, float)


def alpha_from_submission(probs, ic: float, sigma_annual) -> AlphaVector:
    s = score_submission(probs)
    return AlphaVector(linear_bayes_alpha(s, ic, sigma_annual), ic, s)


# ---------------------------------------------------------------------------
# Sharpe optimization


def sharpe_objective(w, alpha, cov) -> float:
    w = np.asarray(w, float)
    q = float(w @ cov @ w)
    return float(w @ alpha) / math.sqrt(q) if q > 0 else -math.inf


def _neg_sharpe_split(x, alpha, cov, n):
    w = x[:n] - x[n:]
    sw = cov @ w
    q = float(w @ sw)
    if q <= 1e-300:
        return 0.0, np.zeros_like(x)
    rq = math.sqrt(q)
    a = float(w @ alpha)
    g = alpha / rq - a * sw / (q * rq)
    return -a / rq, -np.concatenate([g, -g])


def _start_points(alpha, cov, n_starts: int, rng: np.random.Generator) -> list[np.ndarray]:
    n = len(alpha)
    starts = [np.full(n, 1.0 / n), alpha.copy()]
    try:
        starts.append(np.linalg.lstsq(cov, alpha, rcond=None)[0])
    except np.linalg.LinAlgError:
        pass
    while len(starts) < n_starts:
        starts.append(rng.standard_normal(n))
    out = []
    for w in starts[:n_starts]:
        g = np.abs(w).sum()
        w = w / g if g > 0 else np.full(n, 1.0 / n)
        out.append(np.concatenate([np.clip(w, 0, None), np.clip(-w, 0, None)]))
    return out


def _neg_sharpe(w, alpha, cov):
    sw = cov @ w
    q = float(w @ sw)
    if q <= 1e-300:
        return 0.0, np.zeros_like(w)
    rq = math.sqrt(q)
    a = float(w @ alpha)
    return -a / rq, -(alpha / rq - a * sw / (q * rq))


def stationarity(w, alpha, cov) -> float:
    """Scale-free gradient norm of the Sharpe ratio at w (0 at an interior optimum)."""
    f, g = _neg_sharpe(np.asarray(w, float), alpha, cov)
    return float(np.linalg.norm(g) * np.linalg.norm(w) / max(abs(f), 1.0))


def _finish(w, alpha, cov, gross_max, status, label, diag) -> OptimizedPortfolio:
    w = w * (gross_max / np.abs(w).sum())  # objective is scale free; use the full budget
    q = float(w @ cov @ w)
    return OptimizedPortfolio(w, math.sqrt(TRADING_DAYS * q), sharpe_objective(w, alpha, cov), status, label, diag)


def _check_inputs(alpha, cov):
    alpha = np.asarray(alpha, float)
    cov = np.asarray(cov, float)
    if not np.any(alpha != 0):
        raise OptimizerInputError("all alphas are zero: the Sharpe objective is degenerate")
    if cov.shape != (len(alpha), len(alpha)):
        raise OptimizerInputError("covariance does not match alpha")
    return alpha, cov


def max_sharpe(alpha, cov, gross_min: float = GROSS_MIN, gross_max: float = GROSS_MAX,
               n_starts: int = 8, seed: int = 0, tol: float = 1e-6) -> OptimizedPortfolio:
    """Maximize w.alpha / sqrt(w' cov w) subject to gross_min <= sum|w| <= gross_max.

    The ratio is invariant to scaling w, so the gross-exposure bounds never restrict
    the optimal direction: each start runs an unconstrained BFGS on w and the best
    stationary point is rescaled to gross exposure ``gross_max``.
    """
    alpha, cov = _check_inputs(alpha, cov)
    if not 0 < gross_min <= gross_max:
        raise ValueError("need 0 < gross_min <= gross_max")
    rng = np.random.default_rng(seed)
    best, best_f, ok = None, math.inf, 0
    n = len(alpha)
    for x0 in _start_points(alpha, cov, n_starts, rng):
        res = minimize(_neg_sharpe, x0[:n] - x0[n:], args=(alpha, cov), jac=True, method="BFGS",
                       options={"gtol": 1e-12, "maxiter": 20 * n + 200})
        if not np.any(res.x != 0) or stationarity(res.x, alpha, cov) > tol:
            continue
        ok += 1
        if res.fun < best_f:
            best, best_f = res.x, res.fun
    diag = {"starts": n_starts, "succeeded": ok}
    if best is None:
        return OptimizedPortfolio(np.zeros(n), 0.0, math.nan, FAILED, "gross", diag)
    diag["stationarity"] = stationarity(best, alpha, cov)
    return _finish(best, alpha, cov, gross_max, OK, "gross", diag)


def max_attainable_vol(cov, gross_max: float = GROSS_MAX) -> float:
    """Largest annualized vol reachable with sum|w| <= gross_max (a single-asset vertex)."""
    return gross_max * math.sqrt(TRADING_DAYS * float(np.max(np.diag(cov))))


def _risk_capped_alpha(alpha, cov, q0: float, gross_max: float):
    """Solve max w.alpha s.t. w' cov w <= q0, sum|w| <= gross_max.

    Any w with w' cov w >= q0 can be shrunk onto w' cov w = q0 without changing its
    Sharpe ratio or breaking the gross bound, so when the variance cap binds at the
    solution it is also the max-Sharpe portfolio under the risk floor. Returns None
    when the cap does not bind or the solver fails.
    """
    n = len(alpha)
    c = np.concatenate([alpha, -alpha])

    def cap(x):
        w = x[:n] - x[n:]
        return (q0 - float(w @ cov @ w)) / q0

    def cap_jac(x):
        g = 2.0 * (cov @ (x[:n] - x[n:])) / q0
        return np.concatenate([-g, g])

    cons = [{"type": "ineq", "fun": lambda x: gross_max - x.sum(), "jac": lambda x: -np.ones(2 * n)},
            {"type": "ineq", "fun": cap, "jac": cap_jac}]
    res = minimize(lambda x: (-float(c @ x), -c), np.zeros(2 * n), jac=True, method="SLSQP",
                   bounds=[(0, None)] * (2 * n), constraints=cons, options={"maxiter": 1000, "ftol": 1e-15})
    if res.status not in (0, 8) or -res.fun <= 0:
        return None
    slack = cap(res.x)
    if abs(slack) > 1e-7 or res.x.sum() > gross_max * (1 + 1e-9):
        return None
    return res.x[:n] - res.x[n:]


def max_sharpe_risk_target(alpha, cov, min_vol: float, gross_min: float = GROSS_MIN,
                           gross_max: float = GROSS_MAX, n_starts: int = 8, seed: int = 0) -> OptimizedPortfolio:
    """Like :func:`max_sharpe` with the extra constraint sqrt(252 w' cov w) >= min_vol.

    If the unconstrained optimum already reaches the target at full gross exposure it
    is returned. Otherwise the risk floor binds and the problem reduces to the convex
    program max w.alpha s.t. w' cov w <= q0, sum|w| <= gross_max (see
    :func:`_risk_capped_alpha`). When that relaxation is not tight, SLSQP runs on
    long/short split weights from ``n_starts`` starting points.
    """
    if min_vol < 0:
        raise ValueError("min_vol must be >= 0")
    plain = max_sharpe(alpha, cov, gross_min, gross_max, n_starts, seed)
    if min_vol == 0:
        return plain
    alpha, cov = _check_inputs(alpha, cov)
    n = len(alpha)
    top = max_attainable_vol(cov, gross_max)
    diag = {"target": min_vol, "max_attainable_vol": top}
    if min_vol > top + 1e-12:
        return OptimizedPortfolio(np.zeros(n), 0.0, math.nan, INFEASIBLE_TARGET, "gross+risk", diag)
    if plain.ok and plain.ex_ante_vol >= min_vol:
        plain.constraint_set = "gross+risk"
        plain.diagnostics.update(diag, risk_active=False)
        return plain

    w = _risk_capped_alpha(alpha, cov, min_vol ** 2 / TRADING_DAYS, gross_max)
    if w is not None:
        diag.update(risk_active=True, method="convex")
        return _finish(w, alpha, cov, gross_max, OK, "gross+risk", diag)

    scale = TRADING_DAYS / min_vol ** 2
    ones = np.ones(2 * n)

    def risk(x):
        w = x[:n] - x[n:]
        return scale * float(w @ cov @ w) - 1.0

    def risk_jac(x):
        g = 2.0 * scale * (cov @ (x[:n] - x[n:]))
        return np.concatenate([g, -g])

    cons = [{"type": "ineq", "fun": lambda x: gross_max - x.sum(), "jac": lambda x: -ones},
            {"type": "ineq", "fun": lambda x: x.sum() - gross_min, "jac": lambda x: ones},
            {"type": "ineq", "fun": risk, "jac": risk_jac}]
    rng = np.random.default_rng(seed)
    starts = _start_points(alpha, cov, n_starts, rng)
    # the largest-variance single asset is always feasible
    k = int(np.argmax(np.diag(cov)))
    vertex = np.zeros(2 * n)
    vertex[k if alpha[k] >= 0 else n + k] = gross_max
    starts = [vertex] + starts[: max(n_starts - 1, 0)]
    best, ok = None, 0
    for x0 in starts:
        res = minimize(_neg_sharpe_split, x0, args=(alpha, cov, n), jac=True, method="SLSQP",
                       bounds=[(0, None)] * (2 * n), constraints=cons,
                       options={"maxiter": 500, "ftol": 1e-12})
        # status 8 is a line-search stall at machine precision; feasibility is what matters
        if res.status not in (0, 8) or not all(c["fun"](res.x) >= -1e-8 for c in cons):
            continue
        ok += 1
        if best is None or res.fun < best.fun:
            best = res
    diag.update(starts=len(starts), succeeded=ok, risk_active=True, method="multistart")
    if best is None:
        return OptimizedPortfolio(np.zeros(n), 0.0, math.nan, FAILED, "gross+risk", diag)
    out = _finish(best.x[:n] - best.x[n:], alpha, cov, gross_max, OK, "gross+risk", diag)
    if out.ex_ante_vol < min_vol - 1e-6:
        out.solver_status = FAILED
    return out


# ---------------------------------------------------------------------------
# Reverse optimization


@dataclass
class ReverseResult:
    implied_alpha: np.ndarray
    ranks: np.ndarray            # 1..5 per asset
    forecast: np.ndarray         # one-hot (n, 5) probability rows
    bounds: np.ndarray


def rank_quintiles(values) -> np.ndarray:
    """Quintile 1..5 by ascending value; exact ties share the mean position."""
    v = np.asarray(values, float)
    n = len(v)
    pos = rankdata(v, method="average")
    return np.clip(np.ceil(5.0 * pos / n - 1e-9), 1, 5).astype(int)


def reverse_optimize(w, cov, ic: float = 0.3, score_sd: float = 3.0, literal: bool = False) -> ReverseResult:
    """Alphas that make ``w`` Sharpe-optimal under ``cov``, within +-ic*score_sd*sigma_i.

    The stationarity condition of the Sharpe ratio gives alpha proportional to
    cov @ w; that direction is scaled as large as the per-asset bounds allow.
    ``literal=True`` instead pushes every alpha to its bound with the sign of w.
    """
    w = np.asarray(w, float)
    cov = np.asarray(cov, float)
    if not np.any(w != 0):
        raise OptimizerInputError("zero portfolio has no implied alpha")
    bounds = ic * score_sd * annualized_sigma(np.diag(cov))
    if literal:
        alpha = bounds * np.sign(w)
    else:
        direction = TRADING_DAYS * (cov @ w)
        mag = np.abs(direction)
        with np.errstate(divide="ignore"):
            c = np.min(np.where(mag > 0, bounds / mag, np.inf))
        alpha = direction * (c if np.isfinite(c) else 0.0)
    ranks = rank_quintiles(alpha)
    forecast = np.zeros((len(w), 5))
    forecast[np.arange(len(w)), ranks - 1] = 1.0
    return ReverseResult(alpha, ranks, forecast, bounds)


# ---------------------------------------------------------------------------
# Realized IC and study tables


@dataclass(frozen=True)
class ICResult:
    ic: float
    defined: bool


def realized_ic(scores, realized_returns) -> ICResult:
    """Spearman correlation of scores with subsequent returns; constant input gives 0 (flagged)."""
    s, r = np.asarray(scores, float), np.asarray(realized_returns, float)
    if np.ptp(s) == 0 or np.ptp(r) == 0:
        return ICResult(0.0, False)
    rho = spearmanr(s, r).statistic
    return ICResult(float(rho), True)


STUDY_COLUMNS = ("ic", "sub_risk", "opt_risk", "sub_return", "opt_return", "sub_ir", "opt_ir")
TABLE7_HEADER = ("ic_quintile", "realized_ic", "submission_ex_ante_risk", "optimal_ex_ante_risk",
                 "submission_return", "optimal_return", "submission_ir", "optimal_ir")


def assign_ic_quintiles(frame: pd.DataFrame) -> pd.Series:
    """Per-period quintile label 1..5 by IC; group sizes differ by at most one."""
    labels = pd.Series(0, index=frame.index, dtype=int)
    for _, grp in frame.groupby("period", sort=True):
        order = grp.sort_values(["ic", "team"], kind="mergesort").index
        for q, chunk in enumerate(np.array_split(np.asarray(order), 5), start=1):
            labels.loc[chunk] = q
    return labels


def ic_quintile_report(frame: pd.DataFrame) -> pd.DataFrame:
    """Median statistics by IC quintile.

    ``frame`` has one row per (team, period) with columns ``team``, ``period`` and
    :data:`STUDY_COLUMNS`. Rows whose optimization failed should be dropped first.
    """
    if frame.empty:
        return pd.DataFrame(columns=TABLE7_HEADER)
    q = assign_ic_quintiles(frame)
    out = frame.assign(ic_quintile=q).groupby("ic_quintile")[list(STUDY_COLUMNS)].median()
    out = out.reset_index()
    out.columns = list(TABLE7_HEADER)
    return out


COHORT_HEADER = ("label", "ex_ante_vol", "ex_post_vol", "ex_post_return", "ex_post_ir")


def cohort_table(frame: pd.DataFrame, teams: Sequence[str], kinds: Sequence[str] = ("submission", "reoptimized")) -> pd.DataFrame:
    """Mean and median rows per portfolio kind for a team cohort.

    ``frame`` columns: team, kind, ex_ante_vol, ex_post_vol, ex_post_return, ex_post_ir.
    """
    sub = frame[frame["team"].isin(list(teams))]
    rows = []
    for stat in ("mean", "median"):
        for kind in kinds:
            part = sub[sub["kind"] == kind]
            vals = getattr(part[list(COHORT_HEADER[1:])], stat)() if len(part) else [math.nan] * 4
            rows.append([f"{kind} ({stat})", *list(vals)])
    return pd.DataFrame(rows, columns=list(COHORT_HEADER))
