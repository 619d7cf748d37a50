"""The dual-stream network: CNN-LSTM on low-frequency modes, BiGRU on high-frequency modes.

Both stream features are concatenated into one fused vector ``f``, which is
treated as a single token: learned projections give ``Q, K, V`` and scaled
dot-product attention over that token feeds a dense head producing one
normalised capacity value.

All parameters live in one flat float64 vector; ``DualStreamModel.view``
returns named, shaped views into it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..features import latest_window
from ..vmd import VmdConfig
from . import layers as L


@dataclass(frozen=True)
class ModelConfig:
    conv_filters: tuple = (16, 32)
    kernel_size: int = 3
    pool_size: int = 2
    lstm_hidden: int = 64
    gru_hidden: int = 32
    attention_dim: int = 32
    dense_sizes: tuple = (32, 1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(v) for v in self.conv_filters))
        object.__setattr__(self, "dense_sizes", tuple(int(v) for v in self.dense_sizes))
        if len(self.conv_filters) != 2:
            raise ValueError("conv_filters needs exactly two entries")
        sizes = (*self.conv_filters, self.kernel_size, self.pool_size, self.lstm_hidden,
                 self.gru_hidden, self.attention_dim, *self.dense_sizes)
        if not self.dense_sizes or min(sizes) < 1:
            raise ValueError(f"all layer sizes must be >= 1: {self}")
        if self.dense_sizes[-1] != 1:
            raise ValueError("the last dense layer must have one output")

    def check_window(self, window_len: int):
        if self.kernel_size > window_len:
            raise ShapeMismatch(f"kernel_size {self.kernel_size} exceeds window_len {window_len}")
        if window_len // self.pool_size // self.pool_size < 1:
            raise ShapeMismatch(f"window_len {window_len} too short for two pools of {self.pool_size}")

    def to_dict(self):
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        d["dense_sizes"] = list(self.dense_sizes)
        return d


# wide layers: 236,225 trainable scalars for one low and two high channels
FULL_SCALE = ModelConfig(conv_filters=(64, 128), kernel_size=3, pool_size=2, lstm_hidden=128,
                         gru_hidden=64, attention_dim=64, dense_sizes=(64, 1))


def param_layout(config: ModelConfig, n_low: int, n_high: int):
    """Ordered ``(name, shape)`` list of every trainable tensor."""
    f1, f2 = config.conv_filters
    K = config.kernel_size
    h, g, dk = config.lstm_hidden, config.gru_hidden, config.attention_dim
    fused = h + 2 * g
    out = [
        ("conv1.W", (K, n_low, f1)), ("conv1.b", (f1,)),
        ("conv2.W", (K, f1, f2)), ("conv2.b", (f2,)),
        ("lstm.Wx", (f2, 4 * h)), ("lstm.Wh", (h, 4 * h)), ("lstm.b", (4 * h,)),
    ]
    for d in ("gru_fwd", "gru_bwd"):
        out += [(f"{d}.Wx", (n_high, 3 * g)), (f"{d}.Wh", (g, 3 * g)),
                (f"{d}.bx", (3 * g,)), (f"{d}.bh", (3 * g,))]
    for p in "qkv":
        out += [(f"attn.W{p}", (fused, dk)), (f"attn.b{p}", (dk,))]
    width = dk
    for i, size in enumerate(config.dense_sizes):
        out += [(f"dense{i}.W", (width, size)), (f"dense{i}.b", (size,))]
        width = size
    return out


def parameter_count(config: ModelConfig, n_low: int, n_high: int) -> int:
    return int(sum(np.prod(shape) for _, shape in param_layout(config, n_low, n_high)))


class DualStreamModel:
    """Parameters plus everything needed to turn a capacity history into a forecast.

    Parameters
    ----------
    config : ModelConfig
    n_low, n_high : int
        Channel counts of the two streams.
    window_len : int
    params : ndarray, optional
        Flat parameter vector; drawn with uniform fan-in scaling from
        ``config.seed`` when omitted.
    scalers : dict, optional
        ``{"low", "high", "target"}`` ``ChannelScaler`` objects.
    vmd : VmdConfig, optional
        Decomposition settings frozen at training time.
    channels : dict, optional
        Labels for the input channels, in the order the model expects them.
    """

    def __init__(self, config: ModelConfig, n_low: int, n_high: int, window_len: int,
                 params=None, scalers=None, vmd: VmdConfig | None = None, channels=None, meta=None):
        config.check_window(window_len)
        self.config = config
        self.n_low = int(n_low)
        self.n_high = int(n_high)
        self.window_len = int(window_len)
        self.layout = param_layout(config, self.n_low, self.n_high)
        self.offsets = {}
        pos = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self.offsets[name] = (pos, size, shape)
            pos += size
        if params is None:
            params = self._init_params(pos)
        params = np.array(params, dtype=float)
        if params.shape != (pos,):
            raise ShapeMismatch(f"expected {pos} parameters, got {params.shape}")
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        self.params = params
        self.scalers = scalers
        self.vmd = vmd
        self.channels = channels or {"low": list(range(self.n_low)),
                                     "high": list(range(self.n_low, self.n_low + self.n_high))}
        self.meta = dict(meta or {})

    def _init_params(self, total):
        rng = np.random.default_rng(self.config.seed)
        flat = np.zeros(total)
        for name, shape in self.layout:
            start, size, _ = self.offsets[name]
            if len(shape) == 1:
                continue
            fan = shape[0] * shape[1] if name.startswith("conv") else shape[0]
            bound = 1.0 / np.sqrt(max(fan, 1))
            flat[start:start + size] = rng.uniform(-bound, bound, size)
        return flat

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def view(self, name, params=None):
        start, size, shape = self.offsets[name]
        src = self.params if params is None else params
        return src[start:start + size].reshape(shape)

    def segments(self):
        """``(name, start, size)`` for every tensor in storage order."""
        return [(name, *self.offsets[name][:2]) for name, _ in self.layout]

    def with_params(self, params):
        return DualStreamModel(self.config, self.n_low, self.n_high, self.window_len, params,
                               self.scalers, self.vmd, self.channels, self.meta)

    # -- forward / backward on scaled batches -----------------------------

    def _p(self, prefix, keys, params):
        return {k: self.view(f"{prefix}.{k}", params) for k in keys}

    def _check(self, low, high):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        if low.ndim == 2:
            low = low[None]
        if high.ndim == 2:
            high = high[None]
        if low.shape[1:] != (self.window_len, self.n_low):
            raise ShapeMismatch(f"low window must be ({self.window_len}, {self.n_low}), got {low.shape[1:]}")
        if high.shape[1:] != (self.window_len, self.n_high):
            raise ShapeMismatch(f"high window must be ({self.window_len}, {self.n_high}), got {high.shape[1:]}")
        if low.shape[0] != high.shape[0]:
            raise ShapeMismatch("low and high batches differ in size")
        return low, high

    def forward(self, low, high, params=None):
        """Normalised predictions for scaled windows; returns ``(y, cache)`` with ``y`` of shape (B,)."""
        low, high = self._check(low, high)
        P = self.params if params is None else params
        cfg = self.config
        caches = {}
        x, caches["conv1"] = L.conv1d_forward(low, self.view("conv1.W", P), self.view("conv1.b", P))
        x, caches["relu1"] = L.relu_forward(x)
        x, caches["pool1"] = L.maxpool_forward(x, cfg.pool_size)
        x, caches["conv2"] = L.conv1d_forward(x, self.view("conv2.W", P), self.view("conv2.b", P))
        x, caches["relu2"] = L.relu_forward(x)
        x, caches["pool2"] = L.maxpool_forward(x, cfg.pool_size)
        f_low, caches["lstm"] = L.lstm_forward(x, self.view("lstm.Wx", P), self.view("lstm.Wh", P),
                                               self.view("lstm.b", P))
        keys = ("Wx", "Wh", "bx", "bh")
        f_high, caches["bigru"] = L.bigru_forward(high, self._p("gru_fwd", keys, P),
                                                  self._p("gru_bwd", keys, P))
        fused = np.concatenate([f_low, f_high], axis=1)[:, None, :]
        q = fused @ self.view("attn.Wq", P) + self.view("attn.bq", P)
        k = fused @ self.view("attn.Wk", P) + self.view("attn.bk", P)
        v = fused @ self.view("attn.Wv", P) + self.view("attn.bv", P)
        att, caches["attn"] = L.attend_forward(q, k, v, cfg.attention_dim)
        x = att[:, 0, :]
        n_dense = len(cfg.dense_sizes)
        for i in range(n_dense):
            x, caches[f"dense{i}"] = L.dense_forward(x, self.view(f"dense{i}.W", P), self.view(f"dense{i}.b", P))
            if i < n_dense - 1:
                x, caches[f"drelu{i}"] = L.relu_forward(x)
        caches["fused"] = fused
        caches["split"] = f_low.shape[1]
        return x[:, 0], caches

    def backward(self, dy, caches, params=None):
        """Flat gradient of ``sum(dy * y)`` with respect to the parameters."""
        P = self.params if params is None else params
        grad = np.zeros_like(self.params)

        def put(name, value):
            start, size, _ = self.offsets[name]
            grad[start:start + size] += np.ravel(value)

        cfg = self.config
        dx = np.asarray(dy, dtype=float)[:, None]
        for i in reversed(range(len(cfg.dense_sizes))):
            if i < len(cfg.dense_sizes) - 1:
                dx = L.relu_backward(dx, caches[f"drelu{i}"])
            dx, g = L.dense_backward(dx, caches[f"dense{i}"])
            put(f"dense{i}.W", g["W"])
            put(f"dense{i}.b", g["b"])
        dq, dk, dv = L.attend_backward(dx[:, None, :], caches["attn"])
        fused = caches["fused"]
        dfused = np.zeros_like(fused)
        for p, d in (("q", dq), ("k", dk), ("v", dv)):
            put(f"attn.W{p}", np.einsum("btd,bte->de", fused, d))
            put(f"attn.b{p}", d.sum(axis=(0, 1)))
            dfused += d @ self.view(f"attn.W{p}", P).T
        dfused = dfused[:, 0, :]
        split = caches["split"]
        _, gf, gb = L.bigru_backward(dfused[:, split:], caches["bigru"])
        for name, g in (("gru_fwd", gf), ("gru_bwd", gb)):
            for key, value in g.items():
                put(f"{name}.{key}", value)
        dx, g = L.lstm_backward(dfused[:, :split], caches["lstm"])
        for key, value in g.items():
            put(f"lstm.{key}", value)
        dx = L.maxpool_backward(dx, caches["pool2"])
        dx = L.relu_backward(dx, caches["relu2"])
        dx, g = L.conv1d_backward(dx, caches["conv2"])
        put("conv2.W", g["W"])
        put("conv2.b", g["b"])
        dx = L.maxpool_backward(dx, caches["pool1"])
        dx = L.relu_backward(dx, caches["relu1"])
        _, g = L.conv1d_backward(dx, caches["conv1"])
        put("conv1.W", g["W"])
        put("conv1.b", g["b"])
        return grad

    # -- inference on raw mode windows ----------------------------------

    def _reorder(self, window, labels, group):
        if labels is None:
            return window
        expected = list(self.channels[group])
        labels = list(labels)
        if sorted(map(str, labels)) != sorted(map(str, expected)) or len(labels) != len(expected):
            raise ShapeMismatch(f"{group} channels {labels} do not match the model's {expected}")
        pos = {str(lab): i for i, lab in enumerate(labels)}
        return np.asarray(window)[..., [pos[str(lab)] for lab in expected]]

    def predict(self, low_window, high_window, low_channels=None, high_channels=None):
        """Capacity in ampere-hours from unscaled mode windows.

        ``low_channels``/``high_channels`` label the columns of the inputs;
        when given they are matched against the training-time labels and the
        columns reordered accordingly.
        """
        low = self._reorder(low_window, low_channels, "low")
        high = self._reorder(high_window, high_channels, "high")
        if self.scalers is not None:
            low = self.scalers["low"].transform(np.asarray(low, dtype=float))
            high = self.scalers["high"].transform(np.asarray(high, dtype=float))
        y, _ = self.forward(low, high)
        if self.scalers is not None:
            y = self.scalers["target"].inverse(y[:, None])[:, 0]
        return float(y[0]) if np.ndim(low_window) == 2 else y

    def predict_next(self, history):
        """Next-cycle capacity after ``history``, re-decomposing it with the frozen settings."""
        if self.vmd is None:
            raise ShapeMismatch("model carries no decomposition settings")
        low, high = latest_window(np.asarray(history, dtype=float), self.vmd, self.n_low, self.window_len)
        return self.predict(low, high)


def build_model(config: ModelConfig, n_low: int, n_high: int, window_len: int, init="uniform", **kw):
    """Fresh model; ``init="zeros"`` gives an all-zero parameter vector."""
    model = DualStreamModel(config, n_low, n_high, window_len, **kw)
    if init == "zeros":
        model.params[:] = 0.0
    elif init != "uniform":
        raise ValueError(f"unknown init {init!r}")
    return model


def forward_low(model: DualStreamModel, low_window):
    """LSTM feature ``f^L`` (length ``lstm_hidden``) for one scaled low-band window."""
    return _stream_features(model, low_window, None)[0]


def forward_high(model: DualStreamModel, high_window):
    """BiGRU feature ``f^H`` (length ``2 * gru_hidden``) for one scaled high-band window."""
    return _stream_features(model, None, high_window)[1]


def _stream_features(model, low, high):
    low = np.zeros((model.window_len, model.n_low)) if low is None else low
    high = np.zeros((model.window_len, model.n_high)) if high is None else high
    _, caches = model.forward(low, high)
    fused = caches["fused"][0, 0]
    split = caches["split"]
    return fused[:split], fused[split:]
