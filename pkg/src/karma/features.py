"""Band classification of modes, sliding windows and min-max scaling."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstantChannel, ParseError, SequenceTooShort, ShapeMismatch, WindowTooLong
from .vmd import ImfSet, VmdConfig, decompose

ZCR_THRESHOLD = 0.01
DEFAULT_WINDOW = 8


def zero_crossing_rate(mode) -> float:
    """Fraction of consecutive samples whose sign differs.

    An exact zero keeps the sign of the sample before it, so touching zero
    and coming back is not a crossing.  Leading zeros have no sign yet;
    leaving them for either side counts as one crossing.
    """
    x = np.asarray(mode, dtype=float)
    n = x.size
    if n < 2:
        raise SequenceTooShort(f"need at least 2 samples, got {n}")
    signs = np.sign(x)
    nz = np.flatnonzero(signs)
    if nz.size == 0:
        return 0.0
    # forward-fill zeros with the previous non-zero sign
    idx = np.maximum.accumulate(np.where(signs != 0, np.arange(n), -1))
    filled = np.where(idx >= 0, signs[np.maximum(idx, 0)], 0.0)
    crossings = int(np.count_nonzero(filled[1:] != filled[:-1]))
    return crossings / n


@dataclass
class BandPartition:
    low: list
    high: list
    zcr_values: np.ndarray
    threshold: float = ZCR_THRESHOLD
    one_sided: bool = False

    @property
    def n_low(self) -> int:
        return len(self.low)

    @property
    def n_high(self) -> int:
        return len(self.high)


def partition_bands(imfs: ImfSet, threshold: float = ZCR_THRESHOLD) -> BandPartition:
    """Modes with ZCR strictly above ``threshold`` are high-frequency."""
    modes = np.atleast_2d(np.asarray(imfs.modes if isinstance(imfs, ImfSet) else imfs, dtype=float))
    if modes.shape[0] < 1:
        raise ValueError("need at least one mode")
    zcr = np.array([zero_crossing_rate(m) for m in modes])
    high = [int(i) for i in np.flatnonzero(zcr > threshold)]
    low = [int(i) for i in np.flatnonzero(zcr <= threshold)]
    one_sided = not low or not high
    if one_sided:
        warnings.warn("all modes fall in one frequency band", RuntimeWarning, stacklevel=2)
    return BandPartition(low=low, high=high, zcr_values=zcr, threshold=threshold,
                         one_sided=one_sided)


def partition_by_count(imfs: ImfSet, n_low: int, threshold: float = ZCR_THRESHOLD) -> BandPartition:
    """Force ``n_low`` low-frequency modes, taking the lowest centre frequencies.

    Used after the start point, where the channel layout is fixed by the
    model but the ZCR of a re-decomposed series may drift across the
    threshold.
    """
    k = imfs.k_max
    if not 0 <= n_low <= k:
        raise ShapeMismatch(f"cannot take {n_low} low modes out of {k}")
    order = [int(i) for i in np.argsort(imfs.omegas, kind="stable")]
    zcr = np.array([zero_crossing_rate(m) for m in imfs.modes])
    return BandPartition(low=sorted(order[:n_low]), high=sorted(order[n_low:]), zcr_values=zcr,
                         threshold=threshold, one_sided=n_low in (0, k))


@dataclass
class ChannelScaler:
    """Per-channel min-max scaling; ``constant`` marks zero-range channels."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.atleast_1d(np.asarray(self.mins, dtype=float))
        self.maxs = np.atleast_1d(np.asarray(self.maxs, dtype=float))

    @classmethod
    def fit(cls, values, axis=0):
        """Fit on ``values`` of shape ``(..., channels)`` reducing all leading axes."""
        v = np.asarray(values, dtype=float)
        v = v.reshape(int(np.prod(v.shape[:-1])), v.shape[-1]) if v.ndim > 1 else v.reshape(-1, 1)
        if v.shape[0] == 0 or v.shape[1] == 0:
            return cls(np.zeros(v.shape[1]), np.zeros(v.shape[1]))
        return cls(v.min(axis=0), v.max(axis=0))

    @property
    def constant(self) -> np.ndarray:
        return ~(self.maxs > self.mins)

    @property
    def n_channels(self) -> int:
        return self.mins.size

    def transform(self, values):
        v = np.asarray(values, dtype=float)
        span = np.where(self.constant, 1.0, self.maxs - self.mins)
        out = (v - self.mins) / span
        return np.where(self.constant, 0.0, out)

    def inverse(self, values):
        v = np.asarray(values, dtype=float)
        if np.any(self.constant):
            raise ConstantChannel("cannot invert scaling of a constant channel")
        return self.mins + v * (self.maxs - self.mins)

    def pairs(self):
        return [(float(a), float(b)) for a, b in zip(self.mins, self.maxs)]

    def to_dict(self):
        return {"mins": [float(x) for x in self.mins], "maxs": [float(x) for x in self.maxs]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mins"], d["maxs"])


def denormalize(value, scaler):
    """Map a scaled value back through ``(min, max)``."""
    if isinstance(scaler, ChannelScaler):
        return scaler.inverse(value)
    lo, hi = scaler
    if not hi > lo:
        raise ConstantChannel(f"scaler ({lo}, {hi}) has zero range")
    return lo + value * (hi - lo)


@dataclass
class WindowedDataset:
    """Scaled input windows with next-cycle capacity targets.

    ``low_windows``/``high_windows`` have shape ``(samples, window_len,
    channels)``; ``targets`` are in ampere-hours and ``target_cycles`` holds
    the cycle each target belongs to.
    """

    low_windows: np.ndarray
    high_windows: np.ndarray
    targets: np.ndarray
    low_scaler: ChannelScaler
    high_scaler: ChannelScaler
    target_scaler: ChannelScaler
    window_len: int
    target_cycles: np.ndarray = field(default=None)
    battery_ids: list = field(default_factory=list)

    def __len__(self):
        return int(self.targets.size)

    @property
    def num_samples(self) -> int:
        return len(self)

    @property
    def scaled_targets(self) -> np.ndarray:
        return self.target_scaler.transform(self.targets[:, None])[:, 0]

    @property
    def scalers(self):
        return {"low": self.low_scaler.pairs(), "high": self.high_scaler.pairs(),
                "target": self.target_scaler.pairs()[0]}

    @property
    def constant_channels(self):
        return {"low": self.low_scaler.constant.copy(), "high": self.high_scaler.constant.copy()}

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return WindowedDataset(self.low_windows[idx], self.high_windows[idx], self.targets[idx],
                               self.low_scaler, self.high_scaler, self.target_scaler,
                               self.window_len,
                               None if self.target_cycles is None else self.target_cycles[idx],
                               [self.battery_ids[i] for i in idx] if self.battery_ids else [])


@dataclass
class RawWindows:
    """Unscaled windows; scaled later with fleet-wide statistics."""

    low: np.ndarray
    high: np.ndarray
    targets: np.ndarray
    target_cycles: np.ndarray
    battery_id: str = ""


def _raw_windows(modes, partition, capacity, window_len, battery_id=""):
    modes = np.asarray(modes, dtype=float)
    L = modes.shape[1]
    if capacity.size != L:
        raise ShapeMismatch(f"modes have length {L} but series has {capacity.size} cycles")
    if not 1 <= window_len < L:
        raise WindowTooLong(f"window_len {window_len} must be in [1, {L - 1}]")
    n = L - window_len
    # view: (n, window_len, k)
    strided = np.lib.stride_tricks.sliding_window_view(modes.T, window_len, axis=0)[:n]
    strided = np.transpose(strided, (0, 2, 1))
    low = np.ascontiguousarray(strided[:, :, partition.low])
    high = np.ascontiguousarray(strided[:, :, partition.high])
    targets = capacity[window_len:].astype(float).copy()
    cycles = np.arange(window_len + 1, L + 1)
    return RawWindows(low, high, targets, cycles, battery_id)


def scale_windows(raw, window_len, scalers=None) -> WindowedDataset:
    """Scale one or more ``RawWindows``; scalers are fitted on them if not given."""
    raws = raw if isinstance(raw, (list, tuple)) else [raw]
    low = np.concatenate([r.low for r in raws])
    high = np.concatenate([r.high for r in raws])
    targets = np.concatenate([r.targets for r in raws])
    cycles = np.concatenate([r.target_cycles for r in raws])
    ids = [r.battery_id for r in raws for _ in range(r.targets.size)]
    if scalers is None:
        scalers = (ChannelScaler.fit(low), ChannelScaler.fit(high),
                   ChannelScaler.fit(targets[:, None]))
    ls, hs, ts = scalers
    if ls.n_channels != low.shape[2] or hs.n_channels != high.shape[2]:
        raise ShapeMismatch("scaler channel count differs from window channels")
    return WindowedDataset(ls.transform(low), hs.transform(high), targets, ls, hs, ts,
                           window_len, cycles, ids)


def make_windows(imfs: ImfSet, partition: BandPartition, series, window_len: int = DEFAULT_WINDOW,
                 scalers=None, fit_until=None) -> WindowedDataset:
    """Sliding windows (stride 1) over the mode channels of one series.

    Sample ``s`` covers cycles ``s .. s+window_len-1`` and targets the
    capacity at cycle ``s+window_len``.  Scalers are fitted on windows whose
    target cycle is at most ``fit_until`` (all windows by default) unless
    ``scalers`` is given as ``(low, high, target)``.
    """
    raw = _raw_windows(imfs.modes, partition, series.capacity, window_len, series.battery_id)
    if scalers is None:
        keep = raw.target_cycles <= (fit_until if fit_until is not None else raw.target_cycles[-1])
        if not np.any(keep):
            raise WindowTooLong(f"no complete window ends before cycle {fit_until}")
        scalers = (ChannelScaler.fit(raw.low[keep]), ChannelScaler.fit(raw.high[keep]),
                   ChannelScaler.fit(raw.targets[keep][:, None]))
    return scale_windows(raw, window_len, scalers)


def latest_window(capacity, vmd_config: VmdConfig, n_low: int, window_len: int):
    """Decompose ``capacity`` and return the unscaled final window as ``(low, high)``."""
    imfs = decompose(capacity, vmd_config)
    part = partition_by_count(imfs, n_low)
    tail = imfs.modes[:, -window_len:].T
    return tail[:, part.low], tail[:, part.high]


def causal_windows(series, vmd_config: VmdConfig, n_low: int, window_len: int = DEFAULT_WINDOW,
                   min_history=None, last_target=None) -> RawWindows:
    """Windows whose modes only see cycles up to the window end.

    For every target cycle ``t`` the prefix ``1..t-1`` is decomposed on its
    own and its last ``window_len`` cycles form the input, which is exactly
    how inputs are built while forecasting past the start point.
    """
    cap = np.asarray(series.capacity, dtype=float)
    first = max(window_len, min_history or 2 * window_len, 8)
    last = cap.size if last_target is None else min(last_target, cap.size)
    lows, highs, targets, cycles = [], [], [], []
    for t in range(first + 1, last + 1):
        lo, hi = latest_window(cap[:t - 1], vmd_config, n_low, window_len)
        lows.append(lo)
        highs.append(hi)
        targets.append(cap[t - 1])
        cycles.append(t)
    k = vmd_config.k_max
    if not targets:
        raise WindowTooLong(f"series {series.battery_id} too short for window_len {window_len}")
    return RawWindows(np.array(lows).reshape(-1, window_len, n_low),
                      np.array(highs).reshape(-1, window_len, k - n_low),
                      np.array(targets), np.array(cycles), series.battery_id)


_WINDOW_MAGIC = b"KRMWIN01"


def save_windows(path, ds: WindowedDataset):
    """Flat binary cache: magic, 4 little-endian uint32 dims, then float64 data.

    Dims are ``(samples, window_len, low channels, high channels)``; the
    payload is the row-major low tensor, high tensor and targets, followed
    by the low, high and target scaler (min, max) pairs.
    """
    n, w, cl = ds.low_windows.shape
    ch = ds.high_windows.shape[2]
    with open(path, "wb") as fh:
        fh.write(_WINDOW_MAGIC)
        fh.write(struct.pack("<4I", n, w, cl, ch))
        for arr in (ds.low_windows, ds.high_windows, ds.targets,
                    np.stack([ds.low_scaler.mins, ds.low_scaler.maxs], axis=1),
                    np.stack([ds.high_scaler.mins, ds.high_scaler.maxs], axis=1),
                    np.stack([ds.target_scaler.mins, ds.target_scaler.maxs], axis=1)):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_windows(path) -> WindowedDataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _WINDOW_MAGIC:
        raise ParseError(f"{path}: not a window cache")
    n, w, cl, ch = struct.unpack("<4I", data[8:24])
    flat = np.frombuffer(data[24:], dtype="<f8")
    sizes = [n * w * cl, n * w * ch, n, cl * 2, ch * 2, 2]
    if flat.size != sum(sizes):
        raise ParseError(f"{path}: payload size mismatch")
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    low = parts[0].reshape(n, w, cl).copy()
    high = parts[1].reshape(n, w, ch).copy()
    ls = ChannelScaler(*parts[3].reshape(cl, 2).T)
    hs = ChannelScaler(*parts[4].reshape(ch, 2).T)
    ts = ChannelScaler(*parts[5].reshape(1, 2).T)
    return WindowedDataset(low, high, parts[2].copy(), ls, hs, ts, w)
