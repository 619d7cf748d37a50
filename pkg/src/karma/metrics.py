"""Point-error metrics and the one-step / multi-step evaluation harness.

All errors are in ampere-hours; MAPE is a percentage.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, LengthMismatch, ZeroGroundTruth
from .prognosis import _as_predictor


def _pair(y, y_hat):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.size != y_hat.size:
        raise LengthMismatch(f"{y.size} targets vs {y_hat.size} predictions")
    if y.size == 0:
        raise EmptyInput("no samples")
    return y, y_hat


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def mape(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    if np.any(y == 0):
        raise ZeroGroundTruth("ground truth contains zeros")
    return float(np.mean(np.abs((y - y_hat) / y)) * 100.0)


@dataclass
class EvalRow:
    battery_id: str
    mae: float
    rmse: float
    mape_percent: float
    n: int
    horizon: int = 1


@dataclass
class EvalReport:
    task: str
    rows: list = field(default_factory=list)

    @property
    def average_mape(self) -> float:
        return float(np.mean([r.mape_percent for r in self.rows])) if self.rows else float("nan")


def _row(battery_id, y, y_hat, horizon):
    return EvalRow(battery_id, mae(y, y_hat), rmse(y, y_hat), mape(y, y_hat), int(np.size(y)), horizon)


def one_cycle_predictions(predictor, capacity, sp: int):
    """Teacher-forced next-cycle estimates for cycles ``sp+1..N``.

    Returns ``(cycles, y, y_hat)``.
    """
    step = _as_predictor(predictor)
    cap = np.asarray(capacity, dtype=float)
    cycles = np.arange(sp + 1, cap.size + 1)
    preds = np.array([float(step(cap[:k - 1])) for k in cycles])
    return cycles, cap[sp:], preds


def evaluate_one_cycle(predictor, split, sp=None) -> EvalRow:
    """1-step errors on the test cycles after the start point.

    ``split`` is a ``FleetSplit`` or a bare ``CapacitySeries`` plus ``sp``.
    """
    series = getattr(split, "test", split)
    sp = getattr(split, "sp", sp)
    _, y, y_hat = one_cycle_predictions(predictor, series.capacity, sp)
    return _row(series.battery_id, y, y_hat, 1)


def horizon_predictions(predictor, capacity, sp: int, horizon: int, stride: int = 1):
    """``horizon``-step-ahead estimates from every start ``s`` in ``sp, sp+stride, ...``.

    From each start the predictor rolls forward on its own outputs; the
    estimate for cycle ``s + horizon`` is kept.  Returns ``(cycles, y, y_hat)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    step = _as_predictor(predictor)
    cap = np.asarray(capacity, dtype=float)
    starts = np.arange(sp, cap.size - horizon + 1, stride)
    if starts.size == 0:
        raise EmptyInput(f"no start point leaves room for horizon {horizon}")
    preds = []
    for s in starts:
        work = list(cap[:s])
        for _ in range(horizon):
            work.append(float(step(np.asarray(work))))
        preds.append(work[-1])
    cycles = starts + horizon
    return cycles, cap[cycles - 1], np.array(preds)


def evaluate_horizon(predictor, split, horizon: int, sp=None, stride: int = 1) -> EvalRow:
    series = getattr(split, "test", split)
    sp = getattr(split, "sp", sp)
    _, y, y_hat = horizon_predictions(predictor, series.capacity, sp, horizon, stride)
    return _row(series.battery_id, y, y_hat, horizon)


def write_report(reports, path):
    """One CSV for a list of reports: ``task,horizon,battery_id,mae,rmse,mape_percent,n``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["task", "horizon", "battery_id", "mae", "rmse", "mape_percent", "n"])
        for rep in reports:
            for r in rep.rows:
                out.writerow([rep.task, r.horizon, r.battery_id, repr(r.mae), repr(r.rmse),
                              repr(r.mape_percent), r.n])
