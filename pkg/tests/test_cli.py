import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from m6eval import cli, market_data as md, reference, submission as sb
from m6eval.synthetic import random_submission, simulate_prices

DEADLINES = ["2022-02-06", "2022-03-06", "2022-04-03"]


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    tickers = reference.universe_tickers()
    md.write_prices(simulate_prices(tickers, "2019-01-01", "2022-04-08", seed=5), root / "prices.csv")
    rng = np.random.default_rng(8)
    for team, periods in {"alpha": (0, 1), "beta": (0, 1), "gamma": (0,)}.items():
        (root / "subs" / team).mkdir(parents=True)
        for p in periods:
            sb.write_submission(random_submission(team, p, tickers, rng), root / "subs" / team / f"{p}.csv")
    # an invalid late entry: gross exposure 2, so gamma keeps its period-0 portfolio
    bad = random_submission("gamma", 1, tickers, rng, gross=2.0)
    sb.write_submission(bad, root / "subs" / "gamma" / "1.csv")
    (root / "run.toml").write_text(
        f'prices = "{root / "prices.csv"}"\nsubmissions = "{root / "subs"}"\n'
        f"deadlines = {json.dumps(DEADLINES)}\nseed = 3\n", encoding="utf-8")
    return root


def run(ws, out, *args):
    return cli.main(["--config", str(ws / "run.toml"), "--out", str(out), *args])


def test_validate_exit_codes(workspace, tmp_path, capsys):
    assert run(workspace, tmp_path, "validate", str(workspace / "subs" / "alpha" / "0.csv")) == 0
    assert run(workspace, tmp_path, "validate", str(workspace / "subs" / "gamma" / "1.csv")) == 1
    assert "WEIGHT_GROSS_HIGH" in capsys.readouterr().out
    report = json.loads((tmp_path / "validation.json").read_text())
    assert report["valid"] is False
    assert run(workspace, tmp_path, "validate", str(tmp_path / "nope.csv")) == 2


def test_score_outputs_and_manifest(workspace, tmp_path):
    assert run(workspace, tmp_path, "score") == 0
    scores = pd.read_csv(tmp_path / "period_scores.csv")
    bench = scores[scores.team_id == "BENCHMARK"]
    np.testing.assert_allclose(bench.rps, 0.16, atol=1e-12)
    assert set(scores.team_id) == {"alpha", "beta", "gamma", "BENCHMARK"}
    # gamma's invalid period-1 entry falls back to its period-0 portfolio
    g = scores[scores.team_id == "gamma"].set_index("period")
    assert g.loc[1, "rps"] != g.loc[0, "rps"]
    board = json.loads((tmp_path / "leaderboard_global.json").read_text())
    assert board["periods"] == [1] and len(board["teams"]) == 4
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for art in manifest["artifacts"]:
        assert hashlib.sha256((tmp_path / art["path"]).read_bytes()).hexdigest() == art["sha256"]
    assert {a["path"] for a in manifest["artifacts"]} >= {"period_scores.csv", "leaderboard_Q1.json"}


def test_score_is_byte_identical(workspace, tmp_path):
    assert run(workspace, tmp_path / "a", "score") == 0
    assert run(workspace, tmp_path / "b", "score") == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_input_failures(workspace, tmp_path):
    assert cli.main(["--out", str(tmp_path), "score"]) == 2  # no prices configured
    bad_cfg = tmp_path / "bad.toml"
    bad_cfg.write_text("colour = 1\n")
    assert cli.main(["--config", str(bad_cfg), "score"]) == 2
    short = tmp_path / "short.csv"
    md.write_prices(simulate_prices(reference.universe_tickers(), "2021-06-01", "2022-02-20", seed=1), short)
    assert run(workspace, tmp_path, "--prices", str(short), "score") == 2
    empty = tmp_path / "empty_subs"
    empty.mkdir()
    assert run(workspace, tmp_path, "--submissions", str(empty), "score") == 1


def test_riskmodel_cycle(workspace, tmp_path):
    assert run(workspace, tmp_path, "riskmodel", "decompose") == 1  # nothing fitted yet
    assert run(workspace, tmp_path, "--as-of", "2022-02-04", "riskmodel", "fit") == 0
    state = json.loads((tmp_path / "riskmodel.json").read_text())
    assert state["model"]["date"] == "2022-02-04" and set(state["hexp"]) == {"1", "20"}
    cov = np.loadtxt(tmp_path / "covariance.txt")
    assert cov.shape == (100, 100) and np.allclose(cov, cov.T)
    assert run(workspace, tmp_path, "riskmodel", "forecast") == 0
    vols = pd.read_csv(tmp_path / "vol_forecasts.csv")
    np.testing.assert_allclose(vols.daily_var, np.diag(cov), rtol=1e-10)
    assert (np.sqrt(252 * np.diag(cov)) > 0.02).all()
    sub = workspace / "subs" / "alpha" / "0.csv"
    assert run(workspace, tmp_path, "riskmodel", "decompose", "--submission", str(sub)) == 0
    d = json.loads((tmp_path / "decomposition.json").read_text())
    parts = d["m6m_var"] + d["other_systematic_var"] + d["specific_var"] + d["covariance_effect"]
    assert parts == pytest.approx(d["total"], rel=1e-12)
    assert d["annualized_vol"] ** 2 / 252 == pytest.approx(d["total"], rel=1e-6)


def test_bad_bekk_parameters_are_domain_errors(workspace, tmp_path):
    assert run(workspace, tmp_path, "--omega", "0.9", "--gamma", "0.5", "riskmodel", "fit") == 1


@pytest.mark.parametrize("study,files", [
    ("connection", ["connection_teams.csv", "connection_census.json"]),
    ("calibration", ["calibration.csv"]),
    ("strategy", ["strategy_teams.csv", "strategy_histogram.csv"]),
    ("concentration", ["concentration.csv"]),
    ("crowds", ["crowds_curve.csv"]),
    ("reverse", ["reverse_instances.csv", "reverse_summary.csv"]),
    ("optimize", ["optimize_instances.csv", "optimize_ic_quintiles.csv"]),
])
def test_studies(workspace, tmp_path, study, files):
    assert run(workspace, tmp_path, "study", study) == 0
    for f in files:
        assert (tmp_path / f).exists(), f
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"].startswith("study")


def test_optimize_study_content(workspace, tmp_path):
    assert run(workspace, tmp_path, "study", "risk-target") == 0
    inst = pd.read_csv(tmp_path / "risk-target_instances.csv")
    assert len(inst) == 6 and (inst.status == "OK").all()
    assert (inst.opt_risk >= inst.sub_risk - 1e-6).all()


def _universe_inputs(tmp_path):
    plan = reference.sector_plan()
    tickers, rows = [], []
    for j, (sector, (_, quota)) in enumerate(plan.items()):
        for i in range(quota + 3):
            t = f"S{j:02d}X{i}"
            tickers.append(t)
            rows.append({"ticker": t, "sector": sector})
    pd.DataFrame(rows).to_csv(tmp_path / "sectors.csv", index=False)
    md.write_prices(simulate_prices(tickers, "2018-01-01", "2019-06-28", seed=2, with_volume=True),
                    tmp_path / "uprices.csv")
    return plan, tickers


def test_universe_command(tmp_path):
    plan, tickers = _universe_inputs(tmp_path)
    args = ["--prices", str(tmp_path / "uprices.csv"), "--seed", "4", "universe", "--sectors", str(tmp_path / "sectors.csv")]
    assert cli.main(["--out", str(tmp_path / "u1"), *args]) == 0
    assert cli.main(["--out", str(tmp_path / "u2"), *args]) == 0
    a = (tmp_path / "u1" / "universe.txt").read_text()
    assert a == (tmp_path / "u2" / "universe.txt").read_text()
    assert len(a.split()) == 100
    meta = json.loads((tmp_path / "u1" / "universe.json").read_text())
    for sector, (_, quota) in plan.items():
        assert len(meta["sectors"][sector]["selected"]) == quota
    # prices without volume cannot be used
    md.write_prices(simulate_prices(tickers, "2018-01-01", "2019-06-28", seed=2), tmp_path / "novol.csv")
    assert cli.main(["--out", str(tmp_path / "u3"), "--prices", str(tmp_path / "novol.csv"), "universe",
                     "--sectors", str(tmp_path / "sectors.csv")]) == 2
