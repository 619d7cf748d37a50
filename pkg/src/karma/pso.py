"""Particle swarm minimiser with box bounds and a seeded generator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PsoConfig:
    bounds: tuple = ((2, 10), (100.0, 10000.0))
    swarm_size: int = 20
    iterations: int = 30
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0


def _key(value):
    # objectives may return a scalar or a tuple compared lexicographically
    return tuple(value) if isinstance(value, (tuple, list)) else (float(value),)


def pso_minimize(objective, cfg: PsoConfig):
    """Minimise ``objective(x)`` over the box ``cfg.bounds``.

    Returns ``(best_position, best_value)``.  Positions are clipped to the
    box after every move and velocities are limited to the box width.
    """
    lo = np.array([b[0] for b in cfg.bounds], dtype=float)
    hi = np.array([b[1] for b in cfg.bounds], dtype=float)
    rng = np.random.default_rng(cfg.seed)
    dim = lo.size
    width = hi - lo

    pos = lo + rng.random((cfg.swarm_size, dim)) * width
    vel = (rng.random((cfg.swarm_size, dim)) - 0.5) * width * 0.2
    vals = [_key(objective(p)) for p in pos]
    pbest = pos.copy()
    pbest_val = list(vals)
    g = min(range(cfg.swarm_size), key=lambda i: pbest_val[i])
    gbest, gbest_val = pbest[g].copy(), pbest_val[g]

    for _ in range(cfg.iterations):
        r1 = rng.random((cfg.swarm_size, dim))
        r2 = rng.random((cfg.swarm_size, dim))
        vel = (cfg.inertia * vel + cfg.cognitive * r1 * (pbest - pos)
               + cfg.social * r2 * (gbest - pos))
        vel = np.clip(vel, -width, width)
        pos = np.clip(pos + vel, lo, hi)
        for i in range(cfg.swarm_size):
            v = _key(objective(pos[i]))
            if v < pbest_val[i]:
                pbest[i] = pos[i]
                pbest_val[i] = v
                if v < gbest_val:
                    gbest, gbest_val = pos[i].copy(), v
    return gbest, gbest_val
