"""Dual-stream CNN-LSTM / BiGRU network with attention fusion, in plain numpy."""
from .io import load_model, save_model
from .layers import attend
from .model import (FULL_SCALE, DualStreamModel, ModelConfig, build_model, forward_high,
                    forward_low, parameter_count)
from .training import LossHistory, TrainConfig, gradient_check, gradient_check_attend, mse_loss, train

__all__ = [
    "FULL_SCALE", "DualStreamModel", "LossHistory", "ModelConfig", "TrainConfig", "attend",
    "build_model", "forward_high", "forward_low", "gradient_check", "gradient_check_attend",
    "load_model", "mse_loss", "parameter_count", "save_model", "train",
]
