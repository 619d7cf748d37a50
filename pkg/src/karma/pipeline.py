"""End-to-end glue: tune the decomposition, build fleet windows, train, forecast.

Everything that needs the decomposition settings reads them from the
observed part of the test battery, so nothing after the start point leaks
into training.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import FleetSplit
from .degradation import PfConfig
from .features import (DEFAULT_WINDOW, _raw_windows, causal_windows, partition_bands,
                       partition_by_count, scale_windows)
from .neural import DualStreamModel, ModelConfig, TrainConfig, build_model, train
from .prognosis import Prognosis, forecast
from .pso import PsoConfig
from .vmd import VmdConfig, decompose, tune_vmd


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for one leave-one-out run.

    ``auto_tune`` runs the swarm search for ``(k_max, alpha)``; otherwise
    ``vmd`` is used as given.  ``causal`` builds every training window from a
    decomposition of the cycles before its target, matching how inputs are
    formed past the start point.
    """

    vmd: VmdConfig = field(default_factory=VmdConfig)
    pso: PsoConfig = field(default_factory=PsoConfig)
    auto_tune: bool = False
    window_len: int = DEFAULT_WINDOW
    causal: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def choose_vmd(split: FleetSplit, cfg: PipelineConfig) -> VmdConfig:
    """Decomposition settings, tuned on the observed test prefix when requested."""
    if not cfg.auto_tune:
        return cfg.vmd
    k, alpha = tune_vmd(split.observed.capacity, cfg.pso, cfg.vmd)
    return replace(cfg.vmd, k_max=k, alpha=alpha)


def choose_n_low(split: FleetSplit, vmd_cfg: VmdConfig) -> int:
    """Low-band channel count from the ZCR split of the observed test prefix.

    Each stream keeps at least one channel when ``k_max >= 2``, so a
    one-sided split moves the boundary mode (by centre frequency) across.
    """
    imfs = decompose(split.observed.capacity, vmd_cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        part = partition_bands(imfs)
    k = vmd_cfg.k_max
    if k < 2:
        return part.n_low
    return int(min(max(part.n_low, 1), k - 1))


def fleet_windows(split: FleetSplit, vmd_cfg: VmdConfig, n_low: int, window_len: int,
                  causal: bool = True, scalers=None):
    """Scaled training windows over every training battery with fleet-wide scalers."""
    raws = []
    for series in split.train:
        if causal:
            raws.append(causal_windows(series, vmd_cfg, n_low, window_len))
        else:
            imfs = decompose(series.capacity, vmd_cfg)
            part = partition_by_count(imfs, n_low)
            raws.append(_raw_windows(imfs.modes, part, np.asarray(series.capacity), window_len,
                                     series.battery_id))
    return scale_windows(raws, window_len, scalers)


@dataclass
class FitResult:
    model: DualStreamModel
    history: object
    vmd: VmdConfig
    n_low: int
    n_samples: int


def fit_model(split: FleetSplit, cfg: PipelineConfig | None = None) -> FitResult:
    """Tune (optionally), window the fleet and train a fresh model."""
    cfg = cfg or PipelineConfig()
    vmd_cfg = choose_vmd(split, cfg)
    n_low = choose_n_low(split, vmd_cfg)
    data = fleet_windows(split, vmd_cfg, n_low, cfg.window_len, cfg.causal)
    scalers = {"low": data.low_scaler, "high": data.high_scaler, "target": data.target_scaler}
    model = build_model(cfg.model, n_low, vmd_cfg.k_max - n_low, cfg.window_len,
                        scalers=scalers, vmd=vmd_cfg,
                        channels={"low": [f"imf{i}" for i in range(n_low)],
                                  "high": [f"imf{i}" for i in range(n_low, vmd_cfg.k_max)]},
                        meta={"test_id": split.test.battery_id, "sp": split.sp,
                              "train_ids": [s.battery_id for s in split.train]})
    trained, hist = train(model, data, cfg.train)
    return FitResult(trained, hist, vmd_cfg, n_low, len(data))


def run_prognosis(split: FleetSplit, model: DualStreamModel, pf_cfg: PfConfig | None = None,
                  level: float = 0.95, horizon_cap=None, dump_dir=None) -> Prognosis:
    """Forecast the test battery of ``split`` with a trained model."""
    return forecast(split, model, pf_cfg, level=level, horizon_cap=horizon_cap, dump_dir=dump_dir)
