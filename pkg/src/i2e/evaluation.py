"""Classification/regression metrics and the ranked long/short daily backtest."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .nn.losses import mse as _mse
from .nn.losses import weighted_bce

log = logging.getLogger(__name__)


class EvaluationError(Exception):
    pass


class InsufficientCandidates(EvaluationError):
    pass


class MissingReturn(EvaluationError):
    pass


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    f1: float
    bce_loss: float

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "f1": self.f1, "bce_loss": self.bce_loss}


def classification_metrics(probs, labels, threshold: float = 0.5, weights=None) -> ClassificationMetrics:
    """Positive class is label 1; precision/F1 are 0 when undefined."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.size == 0:
        raise EvaluationError("empty input")
    preds = probs >= threshold
    actual = labels == 1
    tp = int(np.sum(preds & actual))
    fp = int(np.sum(preds & ~actual))
    fn = int(np.sum(~preds & actual))
    accuracy = float(np.mean(preds == actual))
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    bce = weighted_bce(probs, labels.astype(np.float64), weights)
    return ClassificationMetrics(accuracy, precision, f1, bce)


def regression_metrics(preds, targets) -> float:
    """MSE in whatever space the caller supplies (scaled, for report parity)."""
    preds = np.asarray(preds)
    if preds.size == 0:
        raise EvaluationError("empty input")
    return _mse(preds, targets)


def daily_rank(predictions: dict[str, float], k: int = 5) -> tuple[list[str], list[str]]:
    """Top-k and bottom-k symbols by predicted return.

    Sort is descending by prediction with ties broken by ascending symbol;
    the bottom list is returned worst-first. Requires 2k distinct symbols.
    """
    if k == 0:
        return [], []
    if k < 0:
        raise EvaluationError("k must be >= 0")
    if len(predictions) < 2 * k:
        raise InsufficientCandidates(f"need {2 * k} candidates, have {len(predictions)}")
    ordered = sorted(predictions, key=lambda sym: (-predictions[sym], sym))
    top = ordered[:k]
    bottom = list(reversed(ordered[-k:]))
    return top, bottom


def portfolio_return(selection: tuple[list[str], list[str]], realized: dict[str, float]) -> float:
    """Equal-weight 2k-leg return: longs earn r, shorts earn -r."""
    longs, shorts = selection
    if not longs and not shorts:
        return 0.0
    missing = [s for s in [*longs, *shorts] if s not in realized]
    if missing:
        raise MissingReturn(f"no realized return for {missing}")
    total = sum(realized[s] for s in longs) + sum(-realized[s] for s in shorts)
    return total / (len(longs) + len(shorts))


@dataclass
class DayResult:
    date: date
    longs: list[str]
    shorts: list[str]
    portfolio_return: float


@dataclass
class BacktestReport:
    days: list[DayResult]
    skipped: list[tuple[date, str]]
    average_daily_return: float
    weekly: list[tuple[str, float]]  # ("YYYY-Www", mean daily return)
    k: int

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "average_daily_return": self.average_daily_return,
            "days": [
                {
                    "date": d.date.isoformat(),
                    "longs": d.longs,
                    "shorts": d.shorts,
                    "return": d.portfolio_return,
                }
                for d in self.days
            ],
            "skipped": [{"date": d.isoformat(), "reason": r} for d, r in self.skipped],
            "weekly": [{"week": w, "mean_return": r} for w, r in self.weekly],
        }


def iso_week_key(d: date) -> str:
    iso = d.isocalendar()
    return f"{iso[0]}-W{iso[1]:02d}"


def weekly_series(days: list[DayResult]) -> list[tuple[str, float]]:
    buckets: dict[str, list[float]] = {}
    for day in days:
        buckets.setdefault(iso_week_key(day.date), []).append(day.portfolio_return)
    return [(week, float(np.mean(vals))) for week, vals in sorted(buckets.items())]


def backtest(
    predictions_by_date: dict[date, dict[str, float]],
    realized_by_date: dict[date, dict[str, float]],
    k: int = 5,
) -> BacktestReport:
    """Daily re-ranked long/short portfolio over every predicted trading date.

    Days with fewer than 2k candidates or a missing realized return are
    skipped with a recorded reason; at least one day must trade.
    """
    days: list[DayResult] = []
    skipped: list[tuple[date, str]] = []
    for day in sorted(predictions_by_date):
        preds = predictions_by_date[day]
        try:
            longs, shorts = daily_rank(preds, k)
            ret = portfolio_return((longs, shorts), realized_by_date.get(day, {}))
        except (InsufficientCandidates, MissingReturn) as exc:
            skipped.append((day, str(exc)))
            log.info("backtest: skipping %s: %s", day, exc)
            continue
        days.append(DayResult(day, longs, shorts, ret))
    if not days:
        raise EvaluationError("no tradable days in the test period")
    avg = float(np.mean([d.portfolio_return for d in days]))
    return BacktestReport(days, skipped, avg, weekly_series(days), k)


# report writers --------------------------------------------------------------


def write_report_json(report: BacktestReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return path


def write_report_csv(report: BacktestReport, path: Path | str) -> Path:
    """`date,longs,shorts,return` with ;-joined symbol lists."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "longs", "shorts", "return"])
        for day in report.days:
            writer.writerow(
                [day.date.isoformat(), ";".join(day.longs), ";".join(day.shorts), repr(day.portfolio_return)]
            )
    return path


def write_weekly_csv(report: BacktestReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["week", "mean_return"])
        for week, ret in report.weekly:
            writer.writerow([week, repr(ret)])
    return path


def format_classification_table(rows: dict[str, ClassificationMetrics]) -> str:
    header = f"{'Model':<24} {'Accuracy':>10} {'Precision':>10} {'F1':>10} {'BCE':>10}"
    lines = [header, "-" * len(header)]
    for name, m in rows.items():
        lines.append(f"{name:<24} {m.accuracy:>10.4f} {m.precision:>10.4f} {m.f1:>10.4f} {m.bce_loss:>10.4f}")
    return "\n".join(lines)


def format_regression_table(rows: dict[str, float]) -> str:
    header = f"{'Model':<24} {'MSE (scaled)':>14}"
    lines = [header, "-" * len(header)]
    for name, value in rows.items():
        lines.append(f"{name:<24} {value:>14.4e}")
    return "\n".join(lines)


def format_backtest_table(rows: dict[str, float]) -> str:
    header = f"{'Model':<24} {'Average Return':>16}"
    lines = [header, "-" * len(header)]
    for name, value in rows.items():
        lines.append(f"{name:<24} {value:>16.6f}")
    return "\n".join(lines)
