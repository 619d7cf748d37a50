"""Cycle-by-cycle forecasting: data-driven estimates regulated by the particle filter.

A predictor maps the working capacity history (cycles ``1..k-1``) to an
estimate for cycle ``k``.  It is either a plain callable or an object with a
``predict_next(history)`` method such as a trained model.  The filter
assimilates each estimate, and the end-of-life decision is taken on the
posterior-mean capacity curve rather than the raw estimates.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import FleetSplit
from .degradation import (DegradationParams, PfConfig, ParticleEnsemble, estimate_state, eval_capacity, fit_initial,
                          init_particles, propagate, resample_if_needed, update_weights,
                          write_particles)
from .errors import ModelInputMismatch

CENSORED_UNRELIABLE = 0.5


def weighted_quantiles(values, weights, qs):
    """Inverted-CDF quantiles of a weighted sample (each returned value is an atom)."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    return np.quantile(v, np.asarray(qs, dtype=float), weights=w, method="inverted_cdf")


def capacity_ci(ensemble: ParticleEnsemble, k, level: float = 0.95):
    """Weighted central ``level`` interval of the per-particle capacities at cycle ``k``."""
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    tail = (1.0 - level) / 2.0
    lo, hi = weighted_quantiles(ensemble.capacities(k), ensemble.weights, [tail, 1.0 - tail])
    return float(lo), float(hi)


def posterior_mean_capacity(ensemble: ParticleEnsemble, k) -> float:
    """Weighted mean of the per-particle capacities at cycle ``k``.

    The law is convex in the rates, so this is not the capacity of the mean
    parameter vector; the latter can fall outside the particle cloud when the
    fitted covariance is wide.
    """
    w = ensemble.weights
    return float(w @ ensemble.capacities(k) / w.sum())


def crossing_cycles(particles, eol_capacity: float, start: int, cap: int):
    """First cycle in ``start..cap`` where each particle's curve is at or below EoL.

    Returns ``(cycles, censored)``; censored particles get ``cap``.
    """
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    ks = np.arange(start, cap + 1, dtype=float)
    below = (particles[:, [0]] * np.exp(particles[:, [1]] * ks)
             + particles[:, [2]] * np.exp(particles[:, [3]] * ks)) <= eol_capacity
    hit = below.any(axis=1)
    first = np.where(hit, start + np.argmax(below, axis=1), cap)
    return first.astype(int), ~hit


def rul_ci(crossings, weights, sp: int, level: float = 0.95, censored=None):
    """Weighted quantiles of per-particle RULs.

    Returns ``(low, high, censored_fraction, reliable)``; more than half of
    the weight censored makes the interval unreliable.
    """
    c = np.asarray(crossings, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    tail = (1.0 - level) / 2.0
    lo, hi = weighted_quantiles(c - sp, w, [tail, 1.0 - tail])
    frac = float(w[np.asarray(censored, bool)].sum()) if censored is not None else 0.0
    return int(lo), int(hi), frac, frac <= CENSORED_UNRELIABLE


@dataclass
class Prognosis:
    """Result of one forecast; track arrays are aligned on ``cycles`` (``sp+1`` onward)."""

    battery_id: str
    sp: int
    cycles: np.ndarray
    mean_capacity: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    y_hat: np.ndarray
    eol_capacity: float
    rated_capacity: float
    level: float
    eol_cycle: int | None
    rul: int | None
    rul_ci: tuple | None
    terminated_by: str
    censored_fraction: float = 0.0
    rul_ci_reliable: bool = True
    horizon_cap: int = 0
    resample_count: int = 0
    theta: DegradationParams | None = None
    flags: dict = field(default_factory=dict)

    @property
    def soh_percent(self) -> np.ndarray:
        return 100.0 * self.mean_capacity / self.rated_capacity

    def summary(self) -> dict:
        return {
            "battery_id": self.battery_id,
            "sp": self.sp,
            "eol_capacity": self.eol_capacity,
            "eol_cycle": self.eol_cycle,
            "rul": self.rul,
            "rul_ci": self.rul_ci,
            "rul_ci_reliable": self.rul_ci_reliable,
            "censored_fraction": self.censored_fraction,
            "level": self.level,
            "terminated_by": self.terminated_by,
            "horizon_cap": self.horizon_cap,
            "resample_count": self.resample_count,
        }


def _as_predictor(predictor):
    if hasattr(predictor, "predict_next"):
        return predictor.predict_next
    if callable(predictor):
        return predictor
    raise ModelInputMismatch(f"{type(predictor).__name__} cannot produce capacity estimates")


def default_horizon_cap(split: FleetSplit) -> int:
    """Three times the longest observed life in the training fleet."""
    return 3 * max(len(s) for s in split.train)


def forecast(split, predictor, pf_cfg: PfConfig | None = None, level: float = 0.95,
             horizon_cap: int | None = None, sp: int | None = None, dump_dir=None) -> Prognosis:
    """Run the prognosis loop from the start point until end of life or the horizon cap.

    Parameters
    ----------
    split : FleetSplit or CapacitySeries
        With a bare series ``sp`` must be given; only cycles ``<= sp`` are read.
    predictor : callable or object with ``predict_next``
        ``predictor(history) -> float`` where ``history`` holds cycles ``1..k-1``.
    pf_cfg : PfConfig, optional
    level : float
        Central probability of the capacity and RUL intervals.
    horizon_cap : int, optional
        Maximum number of forecast cycles; defaults to three times the
        longest training life (or ``3 * sp`` for a bare series).
    dump_dir : path, optional
        Write the particle ensemble after every cycle as ``particles_<k>.csv``.
    """
    pf_cfg = pf_cfg or PfConfig()
    if isinstance(split, FleetSplit):
        series, sp = split.test, split.sp
        horizon_cap = horizon_cap if horizon_cap is not None else default_horizon_cap(split)
    else:
        series = split
        if sp is None:
            raise ValueError("sp is required when forecasting a bare series")
        if not 2 <= sp <= len(series):
            raise ValueError(f"sp {sp} outside [2, {len(series)}]")
        horizon_cap = horizon_cap if horizon_cap is not None else 3 * sp
    if horizon_cap < 1:
        raise ValueError("horizon_cap must be at least 1")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    step = _as_predictor(predictor)
    eol = float(series.eol_capacity)
    observed = np.asarray(series.capacity[:sp], dtype=float)

    fit = fit_initial(observed, sp, pf_cfg)
    ens = init_particles(fit.theta, fit.sigma, pf_cfg)
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
        write_particles(os.path.join(dump_dir, f"particles_{sp:05d}.csv"), ens)

    history = list(observed)
    cycles, means, lows, highs, preds = [], [], [], [], []
    eol_cycle = None
    resamples = 0
    last = sp + horizon_cap
    for k in range(sp + 1, last + 1):
        y_hat = float(step(np.asarray(history)))
        if not np.isfinite(y_hat):
            raise ModelInputMismatch(f"predictor returned {y_hat} at cycle {k}")
        ens = propagate(ens, pf_cfg)
        ens = update_weights(ens, y_hat, k, pf_cfg)
        ens, did = resample_if_needed(ens, pf_cfg)
        resamples += int(did)
        mean = posterior_mean_capacity(ens, k)
        lo, hi = capacity_ci(ens, k, level)
        cycles.append(k)
        means.append(mean)
        lows.append(min(lo, mean))
        highs.append(max(hi, mean))
        preds.append(y_hat)
        history.append(y_hat)
        if dump_dir is not None:
            write_particles(os.path.join(dump_dir, f"particles_{k:05d}.csv"), ens)
        if mean <= eol:
            eol_cycle = k
            break

    crossings, censored = crossing_cycles(ens.particles, eol, sp + 1, last)
    lo, hi, frac, reliable = rul_ci(crossings, ens.weights, sp, level, censored)
    return Prognosis(
        battery_id=series.battery_id, sp=int(sp), cycles=np.array(cycles),
        mean_capacity=np.array(means), ci_low=np.array(lows), ci_high=np.array(highs),
        y_hat=np.array(preds), eol_capacity=eol, rated_capacity=float(series.rated_capacity),
        level=level, eol_cycle=eol_cycle,
        rul=None if eol_cycle is None else eol_cycle - sp,
        rul_ci=(lo, hi), terminated_by="eol_reached" if eol_cycle is not None else "horizon_cap",
        censored_fraction=frac, rul_ci_reliable=reliable, horizon_cap=int(horizon_cap),
        resample_count=resamples, theta=estimate_state(ens), flags=dict(ens.flags, fit_at_boundary=fit.at_boundary),
    )


def oracle_predictor(capacity):
    """Predictor that reads the true capacity of the next cycle from ``capacity``."""
    cap = np.asarray(capacity, dtype=float)

    def predict(history):
        return float(cap[len(history)])

    return predict


def law_predictor(theta):
    """Predictor that evaluates a known capacity law at the next cycle."""
    def predict(history):
        return float(eval_capacity(theta, len(history) + 1))

    return predict


def first_crossing(capacity, eol_capacity: float):
    """First 1-based cycle with capacity at or below ``eol_capacity``, or None."""
    hit = np.flatnonzero(np.asarray(capacity, dtype=float) <= eol_capacity)
    return int(hit[0]) + 1 if hit.size else None


def write_report(prog: Prognosis, csv_path, summary_path=None):
    """Track CSV plus a ``key = value`` summary file."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["cycle", "mean_capacity", "ci_low", "ci_high", "soh_percent", "y_hat"])
        for row in zip(prog.cycles, prog.mean_capacity, prog.ci_low, prog.ci_high,
                       prog.soh_percent, prog.y_hat):
            out.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
    if summary_path is not None:
        with open(summary_path, "w", encoding="utf-8") as fh:
            for key, value in prog.summary().items():
                if isinstance(value, tuple):
                    value = f"{value[0]},{value[1]}"
                fh.write(f"{key} = {'none' if value is None else value}\n")
