"""Command-line entry point: validate, score, riskmodel, study, universe."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import analysis, factor_risk as fr, market_data as md, portfolio_opt as po, reference
from . import scoring, submission as sb, universe as uv, volatility as vol

logger = logging.getLogger("m6eval")

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2
STUDIES = ("optimize", "risk-target", "reverse", "crowds", "connection", "calibration", "strategy", "concentration")
MODEL_FILE = "riskmodel.json"


class DomainFailure(Exception):
    """Input is readable but the requested computation cannot proceed (exit 1)."""


class InputFailure(Exception):
    """Missing or unusable input files or data coverage (exit 2)."""


@dataclass
class RunConfig:
    prices: str | None = None
    submissions: str | None = None
    universe: str | None = None       # one ticker per line; defaults to the packaged 100
    factors: str | None = None
    sectors: str | None = None
    deadlines: list = field(default_factory=list)  # trial deadline, round deadlines..., final close
    ic: float = 0.1
    omega: float = 0.01
    gamma: float = 0.005
    seed: int = 0
    out: str = "out"
    as_of: str | None = None
    grid_end: str = "2021-11-30"
    model: str | None = None

    def tickers(self) -> list[str]:
        if self.universe is None:
            return reference.universe_tickers()
        return Path(self.universe).read_text(encoding="utf-8").split()

    def periods(self) -> list[tuple[int, date, date]]:
        if not self.deadlines:
            return reference.default_periods()
        marks = [d if isinstance(d, date) else date.fromisoformat(str(d)) for d in self.deadlines]
        if any(b <= a for a, b in zip(marks, marks[1:])):
            raise InputFailure("period dates must be strictly increasing")
        return [(i, marks[i], marks[i + 1]) for i in range(len(marks) - 1)]


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values = {}
    if path:
        try:
            values = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputFailure(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise InputFailure(f"bad config {path}: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise InputFailure(f"unknown config keys: {', '.join(sorted(unknown))}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# Output helpers


class Outputs:
    def __init__(self, root: str | Path, command: str):
        self.root = Path(root)
        self.command = command
        self.files: list[Path] = []
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")
        return p

    def csv(self, name: str, frame: pd.DataFrame) -> Path:
        p = self.path(name)
        frame.to_csv(p, index=False, lineterminator="\n", float_format="%.12g")
        return p

    def manifest(self) -> None:
        arts = []
        for p in sorted(set(self.files)):
            if p.exists():
                arts.append({"path": p.relative_to(self.root).as_posix(),
                             "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        (self.root / "manifest.json").write_text(
            json.dumps({"command": self.command, "artifacts": arts}, indent=2) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (date, pd.Timestamp)):
        return str(o)
    raise TypeError(type(o))


def _clean(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


# ---------------------------------------------------------------------------
# Shared loading


def _require(value, what: str):
    if value is None:
        raise InputFailure(f"missing required setting: {what}")
    return value


def _load_prices(cfg: RunConfig, tickers: Sequence[str]) -> dict[str, md.PriceHistory]:
    path = _require(cfg.prices, "prices")
    try:
        hist = md.load_prices(path, tickers)
    except OSError as exc:
        raise InputFailure(f"cannot read prices: {exc}") from None
    except (md.PriceParseError, md.PriceDataError) as exc:
        raise InputFailure(f"{path}: {exc}") from None
    missing = [t for t in tickers if t not in hist]
    if missing:
        raise InputFailure(f"no prices for {len(missing)} tickers, e.g. {', '.join(missing[:5])}")
    return hist


def _period_data(cfg: RunConfig, hist, tickers) -> list[scoring.PeriodData]:
    aligned = md.align(hist)
    adj = md.price_panel(aligned, "adj_close", list(tickers))
    last = adj.index.max().date()
    periods = cfg.periods()
    for k, start, end in periods:
        # a period needs prices through its last trading day before ``end``
        if last < start or (end - last).days > 4:
            raise InputFailure(f"prices end {last}; period {k} ({start} to {end}) is not covered")
    try:
        return scoring.build_period_data(adj, periods, expected_count=len(tickers))
    except scoring.ScoringError as exc:
        raise InputFailure(str(exc)) from None


def _load_submissions(cfg: RunConfig) -> dict[str, list[sb.Submission]]:
    root = Path(_require(cfg.submissions, "submissions"))
    if not root.is_dir():
        raise InputFailure(f"submissions directory not found: {root}")
    try:
        subs = sb.load_submission_dir(root)
    except sb.SubmissionFormatError as exc:
        raise InputFailure(str(exc)) from None
    if not subs:
        raise DomainFailure(f"no submissions found under {root}")
    return subs


def _effective(subs, periods, tickers) -> dict[str, dict[int, sb.Submission]]:
    """team -> period -> effective submission (teams with no valid entry for a period skip it)."""
    out: dict[str, dict[int, sb.Submission]] = {}
    for team, hist in subs.items():
        per = {}
        for p in periods:
            s = sb.effective_submission(hist, p, tickers)
            if s is not None:
                per[p] = s
        if per:
            out[team] = per
    bench = scoring.benchmark_forecast(tickers)
    out[scoring.BENCHMARK_TEAM] = {p: bench.with_period(p) for p in periods}
    return out


def _score_all(effective, pdata) -> dict[str, list[scoring.PeriodScore]]:
    scores: dict[str, list[scoring.PeriodScore]] = {}
    for team, per in effective.items():
        for d in pdata:
            if d.period_index in per:
                scores.setdefault(team, []).append(scoring.score_period(per[d.period_index], d))
    return scores


def _complete_teams(effective, periods) -> list[str]:
    return sorted(t for t, per in effective.items() if all(p in per for p in periods))


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(args, cfg: RunConfig) -> int:
    try:
        sub = sb.read_submission(args.file, team_id=Path(args.file).parent.name)
    except OSError as exc:
        raise InputFailure(f"cannot read {args.file}: {exc}") from None
    except sb.SubmissionFormatError as exc:
        raise InputFailure(str(exc)) from None
    report = sb.validate(sub, cfg.tickers())
    out = Outputs(cfg.out, "validate")
    out.json("validation.json", report.to_dict())
    out.manifest()
    if report.ok:
        print(f"{args.file}: valid")
        return EXIT_OK
    for v in report.violations:
        print(f"{args.file}: {v.row}: {v.rule} {v.detail}".rstrip())
    return EXIT_DOMAIN


def cmd_score(args, cfg: RunConfig) -> int:
    tickers = cfg.tickers()
    subs = _load_submissions(cfg)
    hist = _load_prices(cfg, tickers)
    pdata = _period_data(cfg, hist, tickers)
    periods = [d.period_index for d in pdata]
    eff = _effective(subs, periods, tickers)
    scores = _score_all(eff, pdata)
    out = Outputs(cfg.out, "score")

    rows = [{"team_id": s.team_id, "period": s.period_index, "rps": s.rps, "ret": s.ret, "sdp": s.sdp,
             "ir": s.ir_annualized} for team in sorted(scores) for s in scores[team]]
    out.csv("period_scores.csv", pd.DataFrame(rows))
    boards = [scoring.build_leaderboard(scores, [p], f"period_{p}") for p in periods]
    rounds = [p for p in periods if p > 0]
    quarters = sorted({(p - 1) // 3 + 1 for p in rounds})
    for q in quarters:
        boards.append(scoring.build_leaderboard(scores, [p for p in rounds if (p - 1) // 3 + 1 == q], f"Q{q}"))
    if rounds:
        boards.append(scoring.build_leaderboard(scores, rounds, "global"))
    for b in boards:
        scoring.write_leaderboard_json(b, out.path(f"leaderboard_{b.label}.json"))
        scoring.write_leaderboard_csv(b, out.path(f"leaderboard_{b.label}.csv"))
    out.manifest()
    final = boards[-1]
    print(f"scored {len(scores)} teams over {len(periods)} periods; {final.label} leaders:")
    for e in final.entries[:5]:
        print(f"  {e.team_id:<20} RPS {e.rps:.5f}  IR {e.ir:.4f}  OR {e.overall:g}")
    return EXIT_OK


def _specs(cfg: RunConfig):
    try:
        return fr.load_factor_specs(cfg.factors)
    except OSError as exc:
        raise InputFailure(f"cannot read factor config: {exc}") from None


def _fit_model(cfg: RunConfig, hist, tickers, as_of=None):
    try:
        return fr.fit_from_prices(hist, tickers, _specs(cfg), cfg.omega, cfg.gamma, as_of)
    except (vol.HexpFitError, fr.FactorFitError, fr.BekkConfigError) as exc:
        raise DomainFailure(str(exc)) from None


def _model_path(cfg: RunConfig) -> Path:
    return Path(cfg.model) if cfg.model else Path(cfg.out) / MODEL_FILE


def _load_model(cfg: RunConfig) -> tuple[fr.FactorRiskModel, dict]:
    path = _model_path(cfg)
    if not path.exists():
        raise DomainFailure(f"no fitted risk model at {path}; run 'riskmodel fit' first")
    state = json.loads(path.read_text(encoding="utf-8"))
    return fr.FactorRiskModel.from_dict(state["model"]), state


def cmd_riskmodel(args, cfg: RunConfig) -> int:
    out = Outputs(cfg.out, f"riskmodel {args.action}")
    tickers = cfg.tickers()
    if args.action == "fit":
        hist = _load_prices(cfg, tickers)
        model, inputs = _fit_model(cfg, hist, tickers, cfg.as_of)
        state = {"model": model.to_dict(), "hexp": {"1": inputs.hexp1.to_dict(), "20": inputs.hexp20.to_dict()}}
        out.json(MODEL_FILE, state)
        model.export_matrix(out.path("covariance.txt"))
        print(f"fitted risk model as of {model.date} for {len(model.asset_ids)} assets")
    elif args.action == "forecast":
        model, state = _load_model(cfg)
        sigma = model.covariance()
        frame = pd.DataFrame({"asset_id": model.asset_ids, "daily_var": np.diag(sigma),
                              "annualized_vol": np.sqrt(fr.TRADING_DAYS * np.diag(sigma))})
        out.csv("vol_forecasts.csv", frame)
        print(f"wrote volatility forecasts for {len(frame)} assets")
    elif args.action == "decompose":
        model, _ = _load_model(cfg)
        if args.submission:
            try:
                sub = sb.read_submission(args.submission)
            except (OSError, sb.SubmissionFormatError) as exc:
                raise InputFailure(str(exc)) from None
            w = sub.weights(model.asset_ids)
            name = Path(args.submission).stem
        else:
            w = scoring.benchmark_portfolio(model.asset_ids).weights(model.asset_ids)
            name = scoring.BENCHMARK_TEAM
        dec = fr.risk_decomposition(w, model)
        out.json("decomposition.json", {"portfolio": name, "date": model.date,
                                         "annualized_vol": fr.annualized_vol(w, model), **dec.to_dict()})
        print(json.dumps(dec.to_dict()))
    elif args.action == "gridsearch":
        hist = _load_prices(cfg, tickers)
        try:
            inputs = fr.prepare_risk_inputs(hist, tickers, cfg.as_of)
            starts = fr.test_window_starts(inputs.z.index, cfg.grid_end)
            res = fr.grid_search(inputs.z, _specs(cfg), starts, returns=inputs.returns, vol_scale=inputs.vol20)
        except (vol.HexpFitError, fr.FactorFitError) as exc:
            raise DomainFailure(str(exc)) from None
        out.json("gridsearch.json", res.to_dict())
        print(f"selected omega={res.omega} gamma={res.gamma} from {len(res.loglik)} cells")
    out.manifest()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Studies


def _realized(w, d: scoring.PeriodData) -> tuple[float, float, float]:
    ir = scoring.information_ratio(scoring.portfolio_log_returns(w, d.asset_returns))
    return ir.ret, ir.sdp * math.sqrt(fr.TRADING_DAYS), ir.ir_annualized


def _study_context(cfg: RunConfig):
    tickers = cfg.tickers()
    subs = _load_submissions(cfg)
    hist = _load_prices(cfg, tickers)
    pdata = _period_data(cfg, hist, tickers)
    periods = [d.period_index for d in pdata]
    eff = _effective(subs, periods, tickers)
    return tickers, hist, pdata, periods, eff


def _optimize_rows(cfg, tickers, hist, pdata, eff, risk_target: bool):
    rows, cohort_rows = [], []
    deadlines = {k: start for k, start, _ in cfg.periods()}
    for d in pdata:
        model, _ = _fit_model(cfg, hist, tickers, deadlines[d.period_index])
        model = model.subset(tickers)
        cov = model.covariance()
        sigma20 = po.annualized_sigma(model.vol_scale ** 2)
        for team in sorted(eff):
            sub = eff[team].get(d.period_index)
            if sub is None or team == scoring.BENCHMARK_TEAM:
                continue
            probs, w = sub.prob_matrix(tickers), sub.weights(tickers)
            scores = po.score_submission(probs)
            alpha = po.linear_bayes_alpha(scores, cfg.ic, sigma20)
            sub_risk = fr.annualized_vol(w, model)
            try:
                if risk_target:
                    opt = po.max_sharpe_risk_target(alpha, cov, sub_risk, seed=cfg.seed)
                else:
                    opt = po.max_sharpe(alpha, cov, seed=cfg.seed)
            except po.OptimizerInputError:
                continue
            ic = po.realized_ic(scores, d.period_returns)
            s_ret, s_vol, s_ir = _realized(w, d)
            rec = {"team": team, "period": d.period_index, "status": opt.solver_status, "ic": ic.ic,
                   "ic_defined": ic.defined, "sub_risk": sub_risk, "sub_return": s_ret, "sub_ir": s_ir}
            cohort_rows.append({"team": team, "period": d.period_index, "kind": "submission",
                                "ex_ante_vol": sub_risk, "ex_post_vol": s_vol, "ex_post_return": s_ret,
                                "ex_post_ir": s_ir})
            if opt.ok:
                o_ret, o_vol, o_ir = _realized(opt.weights, d)
                rec.update(opt_risk=opt.ex_ante_vol, opt_return=o_ret, opt_ir=o_ir)
                cohort_rows.append({"team": team, "period": d.period_index, "kind": "reoptimized",
                                    "ex_ante_vol": opt.ex_ante_vol, "ex_post_vol": o_vol,
                                    "ex_post_return": o_ret, "ex_post_ir": o_ir})
            rows.append(rec)
    return pd.DataFrame(rows), pd.DataFrame(cohort_rows)


def cmd_study(args, cfg: RunConfig) -> int:
    name = args.name
    out = Outputs(cfg.out, f"study {name}")
    tickers, hist, pdata, periods, eff = _study_context(cfg)
    teams = [t for t in _complete_teams(eff, periods)]
    if name in ("optimize", "risk-target"):
        frame, cohort = _optimize_rows(cfg, tickers, hist, pdata, eff, name == "risk-target")
        if frame.empty:
            raise DomainFailure("no submissions could be optimized")
        out.csv(f"{name}_instances.csv", frame)
        ok = frame[frame["status"] == po.OK].dropna(subset=["opt_ir"]) if "opt_ir" in frame else frame.iloc[:0]
        out.csv(f"{name}_ic_quintiles.csv", po.ic_quintile_report(ok))
        scores = _score_all({t: eff[t] for t in teams}, pdata)
        board = scoring.build_leaderboard(scores, periods, "study")
        ranked = [e.team_id for e in board.entries if e.team_id != scoring.BENCHMARK_TEAM]
        by_rps = sorted(ranked, key=lambda t: (board.by_team()[t].rank_rps, t))[:10]
        by_ir = sorted(ranked, key=lambda t: (board.by_team()[t].rank_ir, t))[:10]
        out.csv(f"{name}_top10_rps.csv", po.cohort_table(cohort, by_rps))
        out.csv(f"{name}_top10_ir.csv", po.cohort_table(cohort, by_ir))
        print(f"{name}: {len(frame)} instances, {len(ok)} solved")
    elif name == "reverse":
        deadlines = {k: start for k, start, _ in cfg.periods()}
        rows = []
        for d in pdata:
            model, _ = _fit_model(cfg, hist, tickers, deadlines[d.period_index])
            cov = model.subset(tickers).covariance()
            for team in sorted(eff):
                sub = eff[team].get(d.period_index)
                if sub is None or team == scoring.BENCHMARK_TEAM:
                    continue
                rev = po.reverse_optimize(sub.weights(tickers), cov, literal=args.literal)
                submitted = po.raw_scores(sub.prob_matrix(tickers))
                ok = np.ptp(submitted) > 0 and np.ptp(rev.ranks) > 0
                r = float(np.corrcoef(submitted, rev.ranks)[0, 1]) if ok else math.nan
                rows.append({"team": team, "period": d.period_index, "correlation": r})
        frame = pd.DataFrame(rows)
        out.csv("reverse_instances.csv", frame)
        c = frame["correlation"].dropna() if len(frame) else pd.Series(dtype=float)
        summary = pd.DataFrame([{"mean": c.mean(), "sd": c.std(ddof=1), "p25": c.quantile(0.25),
                                 "p50": c.quantile(0.5), "p75": c.quantile(0.75), "n": len(c)}])
        out.csv("reverse_summary.csv", summary)
        print(summary.to_string(index=False))
    elif name == "crowds":
        scores = _score_all({t: eff[t] for t in teams}, pdata)
        board = scoring.build_leaderboard(scores, periods, "study")
        crowd = [t for t in teams if t != scoring.BENCHMARK_TEAM]
        if not crowd:
            raise DomainFailure("no teams with a submission in every period")
        info = board.by_team()
        curves = []
        for metric, key in (("RPS", "rank_rps"), ("IR", "rank_ir"), ("OR", "rank_overall")):
            ranking = sorted(crowd, key=lambda t: (getattr(info[t], key), t))
            cur = analysis.top_fraction_combination_study(ranking, eff, pdata, mode=args.mode)
            cur.insert(0, "metric", metric)
            curves.append(cur)
        out.csv("crowds_curve.csv", pd.concat(curves, ignore_index=True))
        print(f"crowds: {len(crowd)} teams, mode {args.mode}")
    elif name == "connection":
        rows = []
        for team in sorted(eff):
            if team == scoring.BENCHMARK_TEAM:
                continue
            res = analysis.connection_coefficient([eff[team][p] for p in sorted(eff[team])])
            rows.append({"team": team, "r_con": _clean(res.r_con), "class": res.klass})
        frame = pd.DataFrame(rows, columns=["team", "r_con", "class"])
        census = {c: int((frame["class"] == c).sum()) for c in analysis.CONNECTION_CLASSES}
        out.csv("connection_teams.csv", frame)
        out.json("connection_census.json", census)
        print(json.dumps(census))
    elif name == "calibration":
        probs, outs = [], []
        for d in pdata:
            for team in sorted(eff):
                sub = eff[team].get(d.period_index)
                if sub is not None and team != scoring.BENCHMARK_TEAM:
                    probs.append(sub.prob_matrix(tickers))
                    outs.append(d.outcomes)
        if not probs:
            raise DomainFailure("no team forecasts to calibrate")
        out.csv("calibration.csv", analysis.calibration_curve(np.array(probs), np.array(outs)))
        print(f"calibration over {len(probs)} submissions")
    elif name == "strategy":
        rows = []
        for team in sorted(eff):
            if team == scoring.BENCHMARK_TEAM:
                continue
            hist_t = [eff[team][p] for p in sorted(eff[team])]
            rows.append({"team": team, "changes": analysis.strategy_changes(hist_t),
                         **dict(zip(("exposure", "diversification", "weight_range", "directionality"),
                                    analysis.strategy_profile(hist_t[-1]).labels()))})
        frame = pd.DataFrame(rows)
        out.csv("strategy_teams.csv", frame)
        hist_counts = frame["changes"].value_counts().sort_index() if len(frame) else pd.Series(dtype=int)
        out.csv("strategy_histogram.csv", pd.DataFrame({"changes": hist_counts.index, "teams": hist_counts.values}))
        print(f"strategy: {len(frame)} teams")
    elif name == "concentration":
        rows = []
        for team in sorted(eff):
            for p in sorted(eff[team]):
                m = analysis.concentration_metrics(eff[team][p])
                rows.append({"team": team, "period": p, **m})
        out.csv("concentration.csv", pd.DataFrame(rows))
        print(f"concentration: {len(rows)} team-periods")
    out.manifest()
    return EXIT_OK


def _read_sectors(path: str) -> dict[str, str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return {r["ticker"].strip(): r["sector"].strip() for r in csv.DictReader(fh)}
    except (OSError, KeyError) as exc:
        raise InputFailure(f"cannot read sector file {path}: {exc}") from None


def cmd_universe(args, cfg: RunConfig) -> int:
    sectors = _read_sectors(_require(cfg.sectors, "sectors"))
    path = _require(cfg.prices, "prices")
    try:
        hist = md.load_prices(path, sorted(sectors))
    except OSError as exc:
        raise InputFailure(f"cannot read prices: {exc}") from None
    except (md.PriceParseError, md.PriceDataError) as exc:
        raise InputFailure(f"{path}: {exc}") from None
    as_of = cfg.as_of or str(max(h.calendar[-1] for h in hist.values()).date())
    feats, skipped = {}, []
    for t in sorted(hist):
        f = hist[t].frame
        if "volume" not in f:
            raise InputFailure(f"{path}: volume column required for universe construction")
        try:
            feats[t] = uv.compute_features(t, f["close"], f["volume"], as_of).values
        except uv.InsufficientHistoryError as exc:
            logger.warning("%s", exc)
            skipped.append(t)
    table = pd.DataFrame.from_dict(feats, orient="index", columns=list(uv.FEATURE_NAMES))
    plan = reference.sector_plan()
    try:
        sel = uv.select_universe(table, sectors, plan, cfg.seed)
    except ValueError as exc:
        raise DomainFailure(str(exc)) from None
    out = Outputs(cfg.out, "universe")
    tickers = sorted(sel.stocks) + sorted(reference.etf_tickers())
    out.path("universe.txt").write_text("\n".join(tickers) + "\n", encoding="utf-8")
    out.json("universe.json", {
        "as_of": as_of, "seed": cfg.seed, "skipped": skipped,
        "sectors": {s: {"k": sel.clusterings[s].k, "cluster_sizes": sel.clusterings[s].sizes,
                        "quotas": sel.quotas[s], "selected": sel.per_sector[s]} for s in sorted(sel.per_sector)},
    })
    out.manifest()
    print(f"selected {len(sel.stocks)} stocks + {len(reference.etf_tickers())} ETFs")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="m6eval", description=__doc__)
    ap.add_argument("--config", help="TOML run configuration")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--prices", default=None)
    ap.add_argument("--submissions", default=None)
    ap.add_argument("--universe", default=None, help="file with one ticker per line")
    ap.add_argument("--factors", default=None, help="factor definition TOML")
    ap.add_argument("--ic", type=float, default=None)
    ap.add_argument("--omega", type=float, default=None)
    ap.add_argument("--gamma", type=float, default=None)
    ap.add_argument("--as-of", dest="as_of", default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check one submission file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("score", help="score a submissions directory and write leaderboards")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("riskmodel", help="fit or query the factor risk model")
    p.add_argument("action", choices=("fit", "forecast", "decompose", "gridsearch"))
    p.add_argument("--submission", help="portfolio to decompose (default: benchmark)")
    p.add_argument("--model", default=None, help="fitted model state (default: <out>/riskmodel.json)")
    p.set_defaults(func=cmd_riskmodel)

    p = sub.add_parser("study", help="run one of the analysis studies")
    p.add_argument("name", choices=STUDIES)
    p.add_argument("--mode", choices=("forecast", "weights", "both"), default="both",
                   help="what to average in the crowds study")
    p.add_argument("--literal", action="store_true", help="reverse study: push alphas to their bounds")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("universe", help="sample the 50-stock universe")
    p.add_argument("--sectors", default=None, help="CSV with columns ticker,sector")
    p.set_defaults(func=cmd_universe)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "out", "prices", "submissions", "universe", "factors", "ic", "omega", "gamma",
                  "as_of", "model", "sectors")}
    try:
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except InputFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainFailure, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    raise SystemExit(main())
