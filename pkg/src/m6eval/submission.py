"""Team submissions: representation, validity rules, carry-forward and CSV I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SUBMISSION_HEADER = ("ID", "Rank1", "Rank2", "Rank3", "Rank4", "Rank5", "Decision")
PROB_TOL = 1e-6
GROSS_MIN = 0.25
GROSS_MAX = 1.0

# rule names
PROB_SUM = "PROB_SUM"
PROB_NEGATIVE = "PROB_NEGATIVE"
WEIGHT_GROSS_HIGH = "WEIGHT_GROSS_HIGH"
WEIGHT_GROSS_LOW = "WEIGHT_GROSS_LOW"
MISSING_ASSET = "MISSING_ASSET"
DUPLICATE_ASSET = "DUPLICATE_ASSET"
UNKNOWN_ASSET = "UNKNOWN_ASSET"


class SubmissionFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SubmissionRow:
    asset_id: str
    probs: tuple[float, float, float, float, float]
    weight: float


@dataclass(frozen=True)
class Submission:
    team_id: str
    period_index: int
    rows: tuple[SubmissionRow, ...]
    submitted_at: datetime = datetime(1970, 1, 1)

    @property
    def asset_ids(self) -> list[str]:
        return [r.asset_id for r in self.rows]

    def prob_matrix(self, order: Sequence[str] | None = None) -> np.ndarray:
        """(n_assets, 5) probabilities, optionally reordered to ``order``."""
        if order is None:
            return np.array([r.probs for r in self.rows], dtype=float)
        by_id = {r.asset_id: r.probs for r in self.rows}
        return np.array([by_id[a] for a in order], dtype=float)

    def weights(self, order: Sequence[str] | None = None) -> np.ndarray:
        if order is None:
            return np.array([r.weight for r in self.rows], dtype=float)
        by_id = {r.asset_id: r.weight for r in self.rows}
        return np.array([by_id[a] for a in order], dtype=float)

    @property
    def gross_exposure(self) -> float:
        return float(np.abs(self.weights()).sum())

    @classmethod
    def from_arrays(cls, team_id: str, period_index: int, asset_ids: Sequence[str], probs, weights,
                    submitted_at: datetime = datetime(1970, 1, 1)) -> "Submission":
        probs = np.asarray(probs, dtype=float)
        weights = np.asarray(weights, dtype=float)
        rows = tuple(SubmissionRow(a, tuple(float(x) for x in p), float(w))
                     for a, p, w in zip(asset_ids, probs, weights))
        return cls(team_id, period_index, rows, submitted_at)

    def with_period(self, period_index: int) -> "Submission":
        return replace(self, period_index=period_index)


@dataclass(frozen=True)
class Violation:
    row: str  # asset id, or "*" for whole-submission rules
    rule: str
    detail: str = ""


@dataclass
class ValidationReport:
    team_id: str
    period_index: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "team_id": self.team_id,
            "period_index": self.period_index,
            "valid": self.ok,
            "violations": [{"row": v.row, "rule": v.rule, "detail": v.detail} for v in self.violations],
        }


def validate(sub: Submission, universe: Iterable[str]) -> ValidationReport:
    """Check a submission against the competition validity rules.

    Violations are returned as data; nothing is raised. Row-level violations are
    sorted by asset id so the report does not depend on row order.
    """
    universe = list(universe)
    report = ValidationReport(sub.team_id, sub.period_index)
    row_issues = []
    seen = set()
    for r in sub.rows:
        if r.asset_id in seen:
            row_issues.append(Violation(r.asset_id, DUPLICATE_ASSET))
        seen.add(r.asset_id)
        if any(p < 0 for p in r.probs):
            row_issues.append(Violation(r.asset_id, PROB_NEGATIVE, f"min={min(r.probs)!r}"))
        total = math.fsum(r.probs)
        if abs(total - 1.0) > PROB_TOL:
            row_issues.append(Violation(r.asset_id, PROB_SUM, f"sum={total!r}"))
    known = set(universe)
    for a in sorted(seen - known):
        row_issues.append(Violation(a, UNKNOWN_ASSET))
    for a in sorted(known - seen):
        row_issues.append(Violation(a, MISSING_ASSET))
    row_issues.sort(key=lambda v: (v.row, v.rule, v.detail))
    report.violations.extend(row_issues)

    gross = math.fsum(abs(r.weight) for r in sub.rows)
    if gross > GROSS_MAX:
        report.violations.append(Violation("*", WEIGHT_GROSS_HIGH, f"gross={gross!r}"))
    if gross < GROSS_MIN:
        report.violations.append(Violation("*", WEIGHT_GROSS_LOW, f"gross={gross!r}"))
    return report


def effective_submission(history: Sequence[Submission], period: int,
                         universe: Iterable[str] | None = None) -> Submission | None:
    """Submission in force at ``period``: the last valid one made at or before it.

    Within a period only the latest submission counts; if that one is invalid the
    search falls back to the previous valid submission (when ``universe`` is given).
    """
    universe = None if universe is None else list(universe)
    candidates = sorted((s for s in history if s.period_index <= period),
                        key=lambda s: (s.period_index, s.submitted_at))
    latest_per_period: dict[int, Submission] = {}
    for s in candidates:
        latest_per_period[s.period_index] = s
    for p in sorted(latest_per_period, reverse=True):
        s = latest_per_period[p]
        if universe is None or validate(s, universe).ok:
            return s
    return None


def _fmt(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def read_submission(path: str | Path, team_id: str = "", period_index: int = 0,
                    submitted_at: datetime | None = None) -> Submission:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SUBMISSION_HEADER:
            raise SubmissionFormatError(f"{path}: expected header {','.join(SUBMISSION_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 7:
                raise SubmissionFormatError(f"{path}: line {lineno}: expected 7 fields")
            try:
                vals = [float(x) for x in rec[1:]]
            except ValueError as exc:
                raise SubmissionFormatError(f"{path}: line {lineno}: {exc}") from None
            rows.append(SubmissionRow(rec[0].strip(), tuple(vals[:5]), vals[5]))
    return Submission(team_id, period_index, tuple(rows), submitted_at or datetime(1970, 1, 1))


def write_submission(sub: Submission, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUBMISSION_HEADER)
        for r in sub.rows:
            w.writerow([r.asset_id] + [_fmt(p) for p in r.probs] + [_fmt(r.weight)])


def load_submission_dir(root: str | Path) -> dict[str, list[Submission]]:
    """Read ``<root>/<team_id>/<period>[_<YYYYmmddTHHMMSS>].csv`` files.

    Returns team -> submissions sorted by (period, submitted_at).
    """
    root = Path(root)
    out: dict[str, list[Submission]] = {}
    for team_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        subs = []
        for f in sorted(team_dir.glob("*.csv")):
            stem = f.stem
            period_part, _, stamp = stem.partition("_")
            try:
                period = int(period_part)
                ts = datetime.strptime(stamp, "%Y%m%dT%H%M%S") if stamp else datetime(1970, 1, 1)
            except ValueError:
                raise SubmissionFormatError(f"{f}: cannot parse period/timestamp from file name") from None
            subs.append(read_submission(f, team_dir.name, period, ts))
        if subs:
            out[team_dir.name] = sorted(subs, key=lambda s: (s.period_index, s.submitted_at))
    return out
