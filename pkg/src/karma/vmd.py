"""Variational mode decomposition of 1-D capacity signals.

The solver works on the one-sided (real FFT) spectrum of a mirror-extended
copy of the input and alternates three updates until the modes stop moving:

* Wiener-style mode update
  ``u_k <- (f - sum_{i != k} u_i + lam / 2) / (1 + 2 alpha (w - w_k)^2)``
* centre-of-gravity frequency update over ``[0, 0.5]``
* dual ascent ``lam <- lam + tau (f - sum_k u_k)``

Frequencies are in cycles per sample, so the Nyquist limit is 0.5.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import hilbert

from .errors import EmptySearchSpace, NonFiniteInput, SignalTooShort
from .pso import PsoConfig, pso_minimize

MIN_SIGNAL_LENGTH = 8


@dataclass(frozen=True)
class VmdConfig:
    k_max: int = 3
    alpha: float = 2000.0
    tau: float = 0.0
    tol: float = 1e-7
    max_iters: int = 500
    init_omega: str = "uniform"

    def __post_init__(self):
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError(f"k_max must be a positive integer, got {self.k_max}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.init_omega not in ("uniform", "zero"):
            raise ValueError(f"init_omega must be 'uniform' or 'zero', got {self.init_omega!r}")


@dataclass
class ImfSet:
    """Modes sorted by ascending centre frequency.

    ``modes`` has shape ``(k_max, n)``; ``residual`` is input minus the mode sum.
    """

    modes: np.ndarray
    omegas: np.ndarray
    residual: np.ndarray
    iterations_used: int = 0
    converged: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def k_max(self) -> int:
        return self.modes.shape[0]

    @property
    def length(self) -> int:
        return self.modes.shape[1]

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def mirror_extend(signal):
    """Mirror half the signal onto each end; returns (extended, offset)."""
    f = np.asarray(signal, dtype=float)
    n = f.size
    left = n // 2
    right = n - left
    ext = np.concatenate([f[:left][::-1], f, f[n - right:][::-1]])
    return ext, left


def _check_signal(signal) -> np.ndarray:
    f = np.asarray(signal, dtype=float)
    if f.ndim != 1:
        raise ValueError("signal must be one-dimensional")
    if f.size < MIN_SIGNAL_LENGTH:
        raise SignalTooShort(f"signal length {f.size} < {MIN_SIGNAL_LENGTH}")
    if not np.all(np.isfinite(f)):
        raise NonFiniteInput("signal contains NaN or infinite values")
    return f


def decompose(signal, config: VmdConfig | None = None) -> ImfSet:
    """Split ``signal`` into ``config.k_max`` band-limited modes.

    Parameters
    ----------
    signal : array_like
        Real, finite samples; at least 8 of them.
    config : VmdConfig, optional
        Solver settings; the defaults suit noisy capacity series.

    Returns
    -------
    ImfSet
        Modes ordered by ascending centre frequency.  Hitting
        ``max_iters`` is not an error; ``converged`` is False then.
    """
    cfg = config or VmdConfig()
    f = _check_signal(signal)
    n = f.size
    ext, offset = mirror_extend(f)
    T = ext.size
    K = int(cfg.k_max)

    f_hat = np.fft.rfft(ext)
    freqs = np.fft.rfftfreq(T)
    alpha = float(cfg.alpha)

    if cfg.init_omega == "uniform":
        omega = 0.5 * np.arange(K) / K
    else:
        omega = np.zeros(K)

    u_hat = np.zeros((K, freqs.size), dtype=complex)
    lam = np.zeros(freqs.size, dtype=complex)
    total = np.zeros(freqs.size, dtype=complex)
    power_floor = np.finfo(float).tiny

    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        delta = 0.0
        for k in range(K):
            prev = u_hat[k]
            others = total - prev
            new = (f_hat - others + lam / 2) / (1.0 + 2.0 * alpha * (freqs - omega[k]) ** 2)
            power = np.abs(new) ** 2
            psum = power.sum()
            if psum > power_floor:
                omega[k] = float(np.dot(freqs, power) / psum)
            prev_energy = float(np.sum(np.abs(prev) ** 2))
            step = float(np.sum(np.abs(new - prev) ** 2))
            if prev_energy > power_floor:
                delta += step / prev_energy
            elif step > power_floor:
                delta = np.inf
            u_hat[k] = new
            total = others + new
        if cfg.tau > 0:
            lam = lam + cfg.tau * (f_hat - total)
        # summed per-mode relative change; the first sweep starts from zero modes
        if it > 1 and delta < cfg.tol:
            converged = True
            break

    modes_ext = np.fft.irfft(u_hat, n=T, axis=1)
    modes = modes_ext[:, offset:offset + n].copy()
    order = np.argsort(omega, kind="stable")
    modes = modes[order]
    omega = omega[order]
    residual = f - modes.sum(axis=0)
    return ImfSet(modes=modes, omegas=omega.copy(), residual=residual,
                  iterations_used=it, converged=converged)


def reconstruct(imfs: ImfSet) -> np.ndarray:
    """Pointwise sum of the modes; the residual is not added back."""
    modes = np.asarray(imfs.modes, dtype=float)
    return modes.sum(axis=0)


def mode_bandwidths(imfs: ImfSet) -> np.ndarray:
    """Second spectral moment of each mode about its centre frequency."""
    out = np.empty(imfs.k_max)
    for k, mode in enumerate(imfs.modes):
        ext, _ = mirror_extend(mode)
        power = np.abs(np.fft.rfft(ext)) ** 2
        freqs = np.fft.rfftfreq(ext.size)
        total = power.sum()
        out[k] = np.dot((freqs - imfs.omegas[k]) ** 2, power) / total if total > 0 else 0.0
    return out


def envelope_entropy(mode) -> float:
    """Shannon entropy of the normalised Hilbert envelope of one mode."""
    env = np.abs(hilbert(np.asarray(mode, dtype=float)))
    s = env.sum()
    if s <= 0:
        return 0.0
    p = env / s
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def relative_l2(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / denom) if denom > 0 else float(np.linalg.norm(a - b))


def vmd_fitness(signal, k_max: int, alpha: float, base: VmdConfig | None = None):
    """PSO objective ``(-mean envelope entropy, reconstruction error)``.

    A clean narrow-band mode has a flat envelope and therefore maximal
    entropy; split or mixed modes beat and lose entropy.  The swarm
    minimises the tuple lexicographically, so higher entropy wins and the
    reconstruction error only breaks ties.
    """
    base = base or VmdConfig()
    cfg = VmdConfig(k_max=int(k_max), alpha=float(alpha), tau=base.tau, tol=base.tol,
                    max_iters=base.max_iters, init_omega=base.init_omega)
    imfs = decompose(signal, cfg)
    entropy = float(np.mean([envelope_entropy(m) for m in imfs.modes]))
    return -round(entropy, 6), relative_l2(reconstruct(imfs), signal)


def tune_vmd(signal, search: PsoConfig | None = None, base: VmdConfig | None = None):
    """Search ``(k_max, alpha)`` with a seeded particle swarm.

    ``search.bounds`` holds ``((k_lo, k_hi), (alpha_lo, alpha_hi))``;
    ``k_max`` is rounded to the nearest integer before each evaluation.
    Returns ``(k_max, alpha)``.
    """
    search = search or PsoConfig()
    f = _check_signal(signal)
    (k_lo, k_hi), (a_lo, a_hi) = search.bounds
    if k_lo > k_hi or a_lo > a_hi or round(k_hi) < 1 or a_hi <= 0:
        raise EmptySearchSpace(f"empty search space {search.bounds}")
    if int(np.ceil(k_lo)) > int(np.floor(k_hi)):
        raise EmptySearchSpace(f"no integer k_max in [{k_lo}, {k_hi}]")

    cache: dict = {}

    def objective(x):
        k = int(np.clip(round(x[0]), np.ceil(k_lo), np.floor(k_hi)))
        a = float(np.clip(x[1], a_lo, a_hi))
        key = (k, a)
        if key not in cache:
            cache[key] = vmd_fitness(f, k, a, base)
        return cache[key]

    best, _ = pso_minimize(objective, search)
    k = int(np.clip(round(best[0]), np.ceil(k_lo), np.floor(k_hi)))
    return k, float(np.clip(best[1], a_lo, a_hi))
