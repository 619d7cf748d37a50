import numpy as np

from karma.dataset import split_fleet
from karma.neural import ModelConfig, TrainConfig
from karma.pipeline import PipelineConfig, choose_n_low, choose_vmd, fit_model, fleet_windows
from karma.synthetic import synthetic_fleet
from karma.vmd import VmdConfig

TINY = ModelConfig(conv_filters=(4, 4), lstm_hidden=4, gru_hidden=3, attention_dim=4, dense_sizes=(4, 1))


def _split(sp=50):
    return split_fleet(synthetic_fleet(), "S4", sp)


def test_n_low_keeps_both_streams():
    split = _split()
    for k in (2, 3, 4):
        n = choose_n_low(split, VmdConfig(k_max=k))
        assert 1 <= n <= k - 1
    assert choose_n_low(split, VmdConfig(k_max=1)) == 1


def test_tuning_only_sees_observed_prefix():
    split = _split()
    cfg = PipelineConfig(auto_tune=True)
    tuned = choose_vmd(split, cfg)
    # changing cycles after the start point does not move the choice
    test = split.test
    test.capacity[60:] += 0.2
    assert choose_vmd(split, cfg) == tuned
    assert choose_vmd(split, PipelineConfig()) == VmdConfig()


def test_fleet_windows_use_fleet_wide_scalers():
    split = _split()
    data = fleet_windows(split, VmdConfig(k_max=3), 1, 8)
    assert set(data.battery_ids) == {s.battery_id for s in split.train}
    assert data.low_windows.min() == 0.0 and data.low_windows.max() == 1.0
    assert data.scaled_targets.min() == 0.0 and data.scaled_targets.max() == 1.0
    plain = fleet_windows(split, VmdConfig(k_max=3), 1, 8, causal=False)
    assert len(plain) == sum(len(s) - 8 for s in split.train)


def test_fit_model_metadata():
    split = _split()
    fit = fit_model(split, PipelineConfig(model=TINY, train=TrainConfig(epochs=2)))
    m = fit.model
    assert m.meta["test_id"] == "S4" and m.meta["sp"] == 50
    assert m.channels["low"] + m.channels["high"] == ["imf0", "imf1", "imf2"]
    assert m.n_low == fit.n_low and fit.n_samples > 0
    y = m.predict_next(split.observed.capacity)
    assert np.isfinite(y)
