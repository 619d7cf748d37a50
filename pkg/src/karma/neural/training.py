"""Adam training on normalised targets and finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergedLoss, EmptyDataset
from . import layers as L
from .model import DualStreamModel


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 20

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in [0, 1)")


@dataclass
class LossHistory:
    """Per-epoch mean squared error over the full training (and validation) split."""

    initial: float
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self):
        return len(self.train)

    def __getitem__(self, i):
        return self.train[i]


def mse_loss(pred, target):
    """``(mean squared error, d loss / d pred)``."""
    diff = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def loss_and_grad(model: DualStreamModel, low, high, target, params=None):
    pred, cache = model.forward(low, high, params)
    loss, dpred = mse_loss(pred, target)
    return loss, model.backward(dpred, cache, params)


def _full_loss(model, low, high, target, params, chunk=256):
    total = 0.0
    for s in range(0, target.size, chunk):
        pred, _ = model.forward(low[s:s + chunk], high[s:s + chunk], params)
        total += float(np.sum((pred - target[s:s + chunk]) ** 2))
    return total / target.size


def train(model: DualStreamModel, data, cfg: TrainConfig | None = None):
    """Fit ``model`` to a ``WindowedDataset``; returns ``(trained_model, LossHistory)``.

    Mini-batch Adam on the MSE of scaled targets.  A seeded fraction of the
    samples is held out; training stops after ``patience`` epochs without a
    validation improvement and the best parameters are kept.  Without a
    validation split every epoch runs and the last parameters are returned.
    The input model is left untouched.
    """
    cfg = cfg or TrainConfig()
    n = len(data)
    if n == 0:
        raise EmptyDataset("no training samples")
    rng = np.random.default_rng(cfg.seed)
    low, high, y = data.low_windows, data.high_windows, data.scaled_targets
    order = rng.permutation(n)
    n_val = int(round(cfg.validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])

    params = model.params.copy()
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    step = 0
    hist = LossHistory(initial=_full_loss(model, low[tr_idx], high[tr_idx], y[tr_idx], params))
    best = (np.inf, params.copy(), 0)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = tr_idx[rng.permutation(tr_idx.size)]
        for s in range(0, perm.size, cfg.batch_size):
            b = perm[s:s + cfg.batch_size]
            loss, g = loss_and_grad(model, low[b], high[b], y[b], params)
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            step += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            mhat = m / (1 - cfg.beta1 ** step)
            vhat = v / (1 - cfg.beta2 ** step)
            params = params - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        tr_loss = _full_loss(model, low[tr_idx], high[tr_idx], y[tr_idx], params)
        if not np.isfinite(tr_loss):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}")
        hist.train.append(tr_loss)
        if n_val:
            val = _full_loss(model, low[val_idx], high[val_idx], y[val_idx], params)
            hist.validation.append(val)
            if val < best[0]:
                best = (val, params.copy(), epoch)
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    hist.stopped_early = True
                    break
    if n_val:
        params, hist.best_epoch = best[1], best[2]
    else:
        hist.best_epoch = len(hist.train)
    trained = model.with_params(params)
    trained.meta["train"] = {"epochs_run": len(hist.train), "best_epoch": hist.best_epoch,
                             "seed": cfg.seed, "learning_rate": cfg.learning_rate}
    return trained, hist


def _rel_err(a, b, floor):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(model: DualStreamModel, sample, epsilon: float = 1e-5, n_params: int = 64,
                   seed: int = 0, floor: float = 1e-7, details: bool = False):
    """Largest relative gap between analytic and central-difference gradients.

    ``sample`` is ``(low, high, target)`` with scaled windows (one window or a
    batch).  Parameters are drawn from every named tensor in turn, so each
    layer contributes, until at least ``max(n_params, 50)`` are checked.
    Relative errors use ``max(|analytic|, |numeric|, floor)`` as denominator.
    With ``details=True`` a per-tensor dict of maxima is returned as well.
    """
    low, high, target = sample
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    if low.ndim == 2:
        low, high = low[None], high[None]
    target = np.atleast_1d(np.asarray(target, dtype=float))
    rng = np.random.default_rng(seed)
    p0 = model.params.copy()
    _, g = loss_and_grad(model, low, high, target, p0)

    segs = model.segments()
    want = max(int(n_params), 50)
    per = max(1, int(np.ceil(want / len(segs))))
    picks = []
    for name, start, size in segs:
        take = min(size, per)
        picks += [(name, int(start + i)) for i in rng.choice(size, take, replace=False)]
    worst = 0.0
    by_name: dict = {}
    for name, idx in picks:
        p = p0.copy()
        p[idx] += epsilon
        lp = mse_loss(model.forward(low, high, p)[0], target)[0]
        p[idx] -= 2 * epsilon
        lm = mse_loss(model.forward(low, high, p)[0], target)[0]
        num = (lp - lm) / (2 * epsilon)
        err = float(_rel_err(g[idx], num, floor))
        worst = max(worst, err)
        by_name[name] = max(by_name.get(name, 0.0), err)
    return (worst, by_name) if details else worst


def gradient_check_attend(n_tokens=4, d_k=5, d_v=3, epsilon=1e-6, seed=0, floor=1e-7):
    """Check ``attend`` on a random multi-token problem; returns the max relative error."""
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(n_tokens, d_k))
    K = rng.normal(size=(n_tokens, d_k))
    V = rng.normal(size=(n_tokens, d_v))
    W = rng.normal(size=(n_tokens, d_v))

    def f(q, k, v):
        return float(np.sum(W * L.attend(q, k, v, d_k)))

    _, cache = L.attend_forward(Q, K, V, d_k)
    grads = L.attend_backward(W, cache)
    worst = 0.0
    mats = [Q, K, V]
    for which, G in enumerate(grads):
        for idx in np.ndindex(mats[which].shape):
            plus = [m.copy() for m in mats]
            minus = [m.copy() for m in mats]
            plus[which][idx] += epsilon
            minus[which][idx] -= epsilon
            num = (f(*plus) - f(*minus)) / (2 * epsilon)
            worst = max(worst, float(_rel_err(G[idx], num, floor)))
    return worst
