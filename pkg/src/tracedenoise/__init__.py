"""Zero-shot single-image denoising with a trace-constrained self-supervised loss."""

from .losses import ABLATIONS, LossConfig, ablation
from .network import build_network
from .noise import NoiseSpec
from .trainer import TrainConfig, TrainReport, zero_shot_denoise

__version__ = "0.1.0"

__all__ = ["ABLATIONS", "LossConfig", "NoiseSpec", "TrainConfig", "TrainReport", "ablation",
           "build_network", "zero_shot_denoise"]
