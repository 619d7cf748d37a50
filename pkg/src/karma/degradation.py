"""Double-exponential capacity law and the particle filter over its parameters.

``C(k) = a exp(b k) + c exp(d k)`` with amplitudes ``a, c > 0`` and rates
``b, d < 0``.  Particles are parameter vectors ``(a, b, c, d)`` that random-walk
between cycles and are reweighted against capacity estimates with a Gaussian
likelihood.  Weights are handled in the log domain.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import (BadCovariance, InvariantViolation, NonFiniteParams, TooFewPoints,
                     UnnormalizedWeights)

AMP_FLOOR = 1e-6
RATE_CAP = -1e-9
# stricter rate cap used by the start-point fit
FIT_RATE_CAP = -1e-6
MIN_FIT_POINTS = 8


@dataclass(frozen=True)
class DegradationParams:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0 and self.b < 0 and self.d < 0):
            raise InvariantViolation(f"parameters outside the feasible set: {self.as_array()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=float)

    @classmethod
    def from_array(cls, x):
        a, b, c, d = (float(v) for v in np.asarray(x, dtype=float))
        return cls(a, b, c, d)

    def __call__(self, k):
        return eval_capacity(self, k)


def eval_capacity(theta, k):
    """Capacity ``a e^{bk} + c e^{dk}``; ``theta`` may be params, a 4-vector or ``(n, 4)``."""
    t = theta.as_array() if isinstance(theta, DegradationParams) else np.asarray(theta, dtype=float)
    k = np.asarray(k, dtype=float)
    if t.ndim == 1:
        return t[0] * np.exp(t[1] * k) + t[2] * np.exp(t[3] * k)
    return t[:, 0] * np.exp(t[:, 1] * k) + t[:, 2] * np.exp(t[:, 3] * k)


def project_array(x, amp_floor=AMP_FLOOR, rate_cap=RATE_CAP) -> np.ndarray:
    """Componentwise clamp into the feasible set; works on ``(4,)`` or ``(n, 4)``."""
    x = np.array(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteParams("parameter vector contains NaN or infinite values")
    x[..., 0] = np.maximum(x[..., 0], amp_floor)
    x[..., 2] = np.maximum(x[..., 2], amp_floor)
    x[..., 1] = np.minimum(x[..., 1], rate_cap)
    x[..., 3] = np.minimum(x[..., 3], rate_cap)
    return x


def project(theta) -> DegradationParams:
    return DegradationParams.from_array(project_array(theta))


@dataclass(frozen=True)
class PfConfig:
    """Particle-filter settings.

    ``q_diag`` is the process-noise variance per component; ``None`` means
    ``(q_rel * |theta_sp|)**2`` from the start-point fit.  ``sigma_floor_rel``
    floors the initial covariance diagonal at ``(sigma_floor_rel * |theta|)**2``.
    """

    n: int = 500
    q_diag: tuple | None = None
    q_rel: float = 1e-3
    sigma_err: float = 0.01
    ess_threshold_fraction: float = 0.5
    k_ini: int = 3
    seed: int = 0
    sigma_floor_rel: float = 1e-4
    sum_band: float = 0.05
    sum_penalty: float = 1e3
    n_starts: int = 5

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 particles, got {self.n}")
        if not self.sigma_err > 0:
            raise ValueError("sigma_err must be positive")
        if not 0 < self.ess_threshold_fraction <= 1:
            raise ValueError("ess_threshold_fraction must be in (0, 1]")
        if self.k_ini < 1:
            raise ValueError("k_ini must be >= 1")
        if self.q_diag is not None and (len(self.q_diag) != 4 or min(self.q_diag) < 0):
            raise ValueError("q_diag must be 4 non-negative variances")


class InitialFit(NamedTuple):
    theta: DegradationParams
    sigma: np.ndarray
    rmse: float
    at_boundary: bool


def _jacobian(x, k):
    a, b, c, d = x
    eb = np.exp(b * k)
    ed = np.exp(d * k)
    return np.column_stack([eb, a * k * eb, ed, c * k * ed])


def _residuals(x, k, y, y0, band, penalty):
    r = eval_capacity(x, k) - y
    excess = abs(x[0] + x[2] - y0) - band * y0
    extra = np.sqrt(penalty) * max(excess, 0.0)
    return r, extra


def _lm(x0, k, y, y0, band, penalty, max_iter=300):
    """Projected Levenberg-Marquardt on the double exponential."""
    x = project_array(x0, rate_cap=FIT_RATE_CAP)
    r, extra = _residuals(x, k, y, y0, band, penalty)
    sse = r @ r + extra ** 2
    mu = 1e-3
    for _ in range(max_iter):
        J = _jacobian(x, k)
        g = J.T @ r
        A = J.T @ J
        if extra > 0:
            s = np.sign(x[0] + x[2] - y0) * np.sqrt(penalty)
            jp = np.array([s, 0.0, s, 0.0])
            A = A + np.outer(jp, jp)
            g = g + jp * extra
        diag = np.maximum(np.diag(A), 1e-300)
        improved = False
        for _ in range(30):
            try:
                step = np.linalg.solve(A + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            x_new = project_array(x + step, rate_cap=FIT_RATE_CAP)
            r_new, extra_new = _residuals(x_new, k, y, y0, band, penalty)
            sse_new = r_new @ r_new + extra_new ** 2
            if np.isfinite(sse_new) and sse_new < sse:
                rel = (sse - sse_new) / max(sse, 1e-300)
                moved = np.max(np.abs(x_new - x) / np.maximum(np.abs(x), 1e-12))
                x, r, extra, sse = x_new, r_new, extra_new, sse_new
                mu = max(mu / 3, 1e-12)
                improved = True
                break
            mu *= 4
        if not improved or rel < 1e-16 or moved < 1e-13:
            break
    return x, sse


def _starts(k, y, n_starts, rng):
    """Seeded initial guesses splitting the fade into fast and slow parts."""
    y = np.maximum(y, 1e-9)
    slope = np.polyfit(k, np.log(y), 1)[0]
    rate = min(slope, -1e-5)
    total = float(np.exp(np.polyfit(k, np.log(y), 1)[1]))
    base = [(0.1, 10.0, 0.5), (0.2, 5.0, 0.8), (0.05, 20.0, 1.0), (0.3, 3.0, 0.5), (0.5, 2.0, 0.2)]
    out = []
    for i in range(n_starts):
        if i < len(base):
            frac, fast, slow = base[i]
        else:
            frac, fast, slow = rng.uniform(0.02, 0.6), rng.uniform(2, 30), rng.uniform(0.1, 1.0)
        out.append(np.array([frac * total, fast * rate, (1 - frac) * total, slow * rate]))
    return out


def fit_initial(series, sp: int, cfg: PfConfig | None = None) -> InitialFit:
    """Least-squares fit of the capacity law on cycles ``k_ini..sp``.

    Returns the fitted parameters, the Gauss-Newton covariance
    ``s^2 (J^T J)^-1`` with its diagonal floored, the fit RMSE and a flag set
    when a rate ended up on the ``-1e-6`` cap (a non-degrading window).
    """
    cfg = cfg or PfConfig()
    cap = np.asarray(getattr(series, "capacity", series), dtype=float)
    k = np.arange(cfg.k_ini, sp + 1, dtype=float)
    if sp > cap.size or k.size < MIN_FIT_POINTS:
        raise TooFewPoints(f"fitting window {cfg.k_ini}..{sp} has {k.size} points, need {MIN_FIT_POINTS}")
    y = cap[cfg.k_ini - 1:sp]
    y0 = float(cap[0])
    rng = np.random.default_rng(cfg.seed)

    best_x, best_sse = None, np.inf
    for x0 in _starts(k, y, cfg.n_starts, rng):
        x, sse = _lm(x0, k, y, y0, cfg.sum_band, cfg.sum_penalty)
        if sse < best_sse:
            best_x, best_sse = x, sse
    # keep the fast term first so |b| >= |d|
    if best_x[1] > best_x[3]:
        best_x = best_x[[2, 3, 0, 1]]

    resid = eval_capacity(best_x, k) - y
    dof = max(k.size - 4, 1)
    s2 = float(resid @ resid) / dof
    J = _jacobian(best_x, k)
    scale = np.abs(best_x)
    try:
        JtJ = J.T @ J
        if np.linalg.cond(JtJ) > 1e15:
            raise np.linalg.LinAlgError("singular")
        sigma = s2 * np.linalg.inv(JtJ)
        sigma = 0.5 * (sigma + sigma.T)
        if not np.all(np.isfinite(sigma)) or np.min(np.linalg.eigvalsh(sigma)) < -1e-12 * np.max(np.abs(sigma)):
            raise np.linalg.LinAlgError("not positive semidefinite")
    except np.linalg.LinAlgError:
        sigma = np.diag((1e-3 * scale) ** 2)
    floor = (cfg.sigma_floor_rel * scale) ** 2
    d = np.diag(sigma).copy()
    sigma[np.diag_indices(4)] = np.maximum(d, floor)
    at_boundary = bool(best_x[1] >= FIT_RATE_CAP or best_x[3] >= FIT_RATE_CAP)
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    return InitialFit(DegradationParams.from_array(best_x), sigma, rmse, at_boundary)


@dataclass
class ParticleEnsemble:
    """Weighted parameter hypotheses.

    ``particles`` is ``(n, 4)``; ``log_weights`` are normalised so that
    ``logsumexp(log_weights) == 0``.  ``process_var`` is the per-component
    random-walk variance and ``rng`` the generator shared by every step.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    process_var: np.ndarray
    rng: np.random.Generator = field(repr=False)
    flags: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def capacities(self, k):
        return eval_capacity(self.particles, k)

    def copy_with(self, **changes):
        data = dict(particles=self.particles, log_weights=self.log_weights,
                    process_var=self.process_var, rng=self.rng, flags=dict(self.flags))
        data.update(changes)
        return ParticleEnsemble(**data)


def _uniform_log(n):
    return np.full(n, -np.log(n))


def init_particles(theta_hat, sigma, cfg: PfConfig | None = None) -> ParticleEnsemble:
    """Draw ``cfg.n`` particles from ``N(theta_hat, sigma)``, project, weight uniformly."""
    cfg = cfg or PfConfig()
    mean = theta_hat.as_array() if isinstance(theta_hat, DegradationParams) else np.asarray(theta_hat, float)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (4, 4) or not np.all(np.isfinite(sigma)) or not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-300):
        raise BadCovariance("sigma must be a finite symmetric 4x4 matrix")
    evals, evecs = np.linalg.eigh(sigma)
    if evals.min() < -1e-10 * max(evals.max(), 0.0) - 1e-300:
        raise BadCovariance(f"sigma is not positive semidefinite (min eigenvalue {evals.min():.3g})")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    rng = np.random.default_rng(cfg.seed)
    eps = rng.standard_normal((cfg.n, 4)) @ root.T
    particles = project_array(mean + eps)
    if cfg.q_diag is not None:
        q = np.asarray(cfg.q_diag, dtype=float)
    else:
        q = (cfg.q_rel * np.abs(mean)) ** 2
    return ParticleEnsemble(particles, _uniform_log(cfg.n), q, rng)


def propagate(ensemble: ParticleEnsemble, cfg: PfConfig | None = None) -> ParticleEnsemble:
    """Random-walk step ``theta + N(0, diag(q))`` followed by projection."""
    std = np.sqrt(ensemble.process_var)
    if not np.any(std > 0):
        return ensemble.copy_with(particles=ensemble.particles.copy())
    noise = ensemble.rng.standard_normal(ensemble.particles.shape) * std
    return ensemble.copy_with(particles=project_array(ensemble.particles + noise))


def update_weights(ensemble: ParticleEnsemble, y_hat: float, k, cfg: PfConfig | None = None) -> ParticleEnsemble:
    """Multiply weights by the Gaussian likelihood of ``y_hat`` at cycle ``k`` and renormalise."""
    cfg = cfg or PfConfig()
    v = y_hat - ensemble.capacities(k)
    logw = ensemble.log_weights - v ** 2 / (2.0 * cfg.sigma_err ** 2)
    flags = dict(ensemble.flags)
    top = np.max(logw)
    if not np.isfinite(top):
        flags["all_zero_weights"] = True
        return ensemble.copy_with(log_weights=_uniform_log(ensemble.n), flags=flags)
    # shift first: at huge magnitudes the normalising constant loses the ulps
    logw = logw - top
    return ensemble.copy_with(log_weights=logw - logsumexp(logw), flags=flags)


def effective_sample_size(weights) -> float:
    """``1 / sum(w**2)`` for normalised weights."""
    w = np.asarray(weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-6:
        raise UnnormalizedWeights(f"weights sum to {w.sum():.9g}, not 1")
    return float(1.0 / np.dot(w, w))


def multinomial_indices(weights, rng, n=None):
    """``n`` i.i.d. draws from the categorical distribution ``weights``."""
    w = np.asarray(weights, dtype=float)
    n = w.size if n is None else n
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), w.size - 1)


def resample_if_needed(ensemble: ParticleEnsemble, cfg: PfConfig | None = None):
    """Multinomial resampling when ESS drops below the threshold.

    Returns ``(ensemble, resampled)``.
    """
    cfg = cfg or PfConfig()
    w = ensemble.weights
    w = w / w.sum()
    if effective_sample_size(w) >= cfg.ess_threshold_fraction * ensemble.n:
        return ensemble, False
    idx = multinomial_indices(w, ensemble.rng)
    return ensemble.copy_with(particles=ensemble.particles[idx].copy(),
                              log_weights=_uniform_log(ensemble.n)), True


def estimate_state(ensemble: ParticleEnsemble) -> DegradationParams:
    """Weighted mean of the particles, projected."""
    w = ensemble.weights
    return project(w @ ensemble.particles / w.sum())


def write_particles(path, ensemble: ParticleEnsemble):
    """One particle per row: ``a,b,c,d,weight``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["a", "b", "c", "d", "weight"])
        for p, w in zip(ensemble.particles, ensemble.weights):
            out.writerow([repr(float(v)) for v in p] + [repr(float(w))])


def read_particles(path):
    """Inverse of :func:`write_particles`; returns ``(particles, weights)``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :4], data[:, 4]
