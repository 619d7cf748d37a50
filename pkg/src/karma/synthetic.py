"""Synthetic capacity fade curves drawn from the double-exponential law."""
from __future__ import annotations

import numpy as np

from .dataset import CapacitySeries
from .degradation import eval_capacity

# four distinct cells of a 2 Ah family; the last one is the usual test cell
FLEET_THETAS = {
    "S1": (0.25, -0.025, 1.72, -0.0022),
    "S2": (0.35, -0.018, 1.66, -0.0019),
    "S3": (0.28, -0.022, 1.69, -0.0024),
    "S4": (0.30, -0.020, 1.70, -0.0020),
}


def analytic_eol(theta, eol_capacity: float, max_cycle: int = 100_000):
    """First integer cycle where the noiseless curve is at or below ``eol_capacity``."""
    k = np.arange(1, max_cycle + 1, dtype=float)
    hit = np.flatnonzero(eval_capacity(theta, k) <= eol_capacity)
    return int(hit[0]) + 1 if hit.size else None


def synthetic_series(theta, n_cycles=None, noise: float = 0.0, seed: int = 0, rated: float = 2.0,
                     eol_fraction: float = 0.7, battery_id: str = "syn", extra: int = 10):
    """Noisy samples of the law at cycles ``1..n_cycles``.

    Without ``n_cycles`` the series runs ``extra`` cycles past the analytic
    end of life.
    """
    if n_cycles is None:
        n_cycles = analytic_eol(theta, eol_fraction * rated) + extra
    k = np.arange(1, n_cycles + 1, dtype=float)
    y = eval_capacity(theta, k)
    if noise > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise, y.size)
    return CapacitySeries(battery_id, np.arange(1, n_cycles + 1), y, rated, eol_fraction)


def synthetic_fleet(noise: float = 0.005, seed: int = 0, thetas=None, **kw):
    """One series per entry of ``thetas`` (default ``FLEET_THETAS``), seeded per cell."""
    thetas = thetas or FLEET_THETAS
    return [synthetic_series(th, noise=noise, seed=seed + i, battery_id=name, **kw)
            for i, (name, th) in enumerate(thetas.items())]
