"""Two-stage zero-shot training on a single noisy image.

Stage 1 fits the network with the pair MSE; stage 2 continues with the
trace-constrained fine-tuning loss. The learning-rate schedule is defined on
the total step count, so with the trace loss disabled the split into two
stages is a pure relabelling of one continuous run.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward
from .errors import ConfigError, InputError, NumericError
from .losses import LossConfig, fine_tune_loss, lambda_schedule, mse_pair_loss
from .metrics import psnr, ssim
from .network import Network, build_network, denoise_image
from .optim import AdamState, adam_step
from .sampling import Downsampler, downsample_pair

logger = logging.getLogger(__name__)

MIN_SIZE = 16
TRACE_EVERY = 10


@dataclass(frozen=True)
class TrainConfig:
    stage1_iters: int = 1200
    stage2_iters: int = 800
    lr: float = 1e-3
    lr_milestones: tuple[float, ...] = (0.6, 0.8)
    lr_gamma: float = 0.5
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    hidden: int = 48
    slope: float = 0.2
    dtype: str = "float32"
    reset_moments: bool = False

    def __post_init__(self):
        if self.stage1_iters < 1 or self.stage2_iters < 1:
            raise ConfigError("iteration counts must be >= 1")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def total_iters(self) -> int:
        return self.stage1_iters + self.stage2_iters

    def lr_at(self, step: int) -> float:
        """Learning rate for global step ``step`` (0-based)."""
        drops = sum(step >= math.floor(m * self.total_iters) for m in self.lr_milestones)
        return self.lr * self.lr_gamma ** drops


@dataclass
class TrainReport:
    stage1_loss: float = math.nan
    stage2_loss: float = math.nan
    psnr_noisy: float | None = None
    psnr_stage1: float | None = None
    psnr_final: float | None = None
    ssim_final: float | None = None
    wall_s_stage1: float = 0.0
    wall_s_stage2: float = 0.0
    loss_trace: list[tuple[int, float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "stage1_loss": self.stage1_loss,
            "stage2_loss": self.stage2_loss,
            "psnr_noisy": self.psnr_noisy,
            "psnr_stage1": self.psnr_stage1,
            "psnr_final": self.psnr_final,
            "ssim_final": self.ssim_final,
            "wall_ms_stage1": round(self.wall_s_stage1 * 1000.0, 1),
            "wall_ms_stage2": round(self.wall_s_stage2 * 1000.0, 1),
        }


def _step(net: Network, loss, opt: AdamState, it: int) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss at iteration {it}")
    net.zero_grad()
    backward(loss)
    adam_step(net.params, net.grads(), opt)
    return value


def _new_optimizer(cfg: TrainConfig) -> AdamState:
    return AdamState(lr=cfg.lr)


def pretrain(net: Network, y: np.ndarray, cfg: TrainConfig, opt: AdamState | None = None,
             report: TrainReport | None = None, iters: int | None = None) -> Network:
    """Stage 1: Adam on the pair MSE over the downsampled sub-images of ``y``.

    ``opt`` is updated in place so its moments can carry into stage 2.
    ``iters`` overrides ``cfg.stage1_iters`` (the lr schedule still uses the
    configured total).
    """
    opt = opt if opt is not None else _new_optimizer(cfg)
    d = Downsampler()
    y1, y2 = downsample_pair(d, y)
    n = cfg.stage1_iters if iters is None else iters
    value = math.nan
    for it in range(n):
        opt.lr = cfg.lr_at(it)
        loss = mse_pair_loss(net, y1, y2, symmetric=cfg.loss.symmetric_mse)
        value = _step(net, loss, opt, it)
        if report is not None and it % TRACE_EVERY == 0:
            report.loss_trace.append((it, value))
    if report is not None:
        report.stage1_loss = value
    return net


def finetune(net: Network, y: np.ndarray, cfg: TrainConfig, opt: AdamState | None = None,
             report: TrainReport | None = None) -> Network:
    """Stage 2: fine-tune with the trace-constrained loss and cosine-annealed weight."""
    if opt is None:
        opt = _new_optimizer(cfg)
    elif cfg.reset_moments:
        opt.reset_moments()
    d = Downsampler()
    offset = cfg.stage1_iters
    value = math.nan
    for t in range(cfg.stage2_iters):
        it = offset + t
        opt.lr = cfg.lr_at(it)
        lam = lambda_schedule(t, cfg.stage2_iters, cfg.loss.lambda0)
        loss = fine_tune_loss(net, y, d, cfg.loss, lam)
        value = _step(net, loss, opt, it)
        if report is not None and it % TRACE_EVERY == 0:
            report.loss_trace.append((it, value))
    if report is not None:
        report.stage2_loss = value
    return net


def final_image(net: Network, y: np.ndarray) -> np.ndarray:
    return np.clip(denoise_image(net, y), 0.0, 1.0)


def zero_shot_denoise(y: np.ndarray, cfg: TrainConfig | None = None,
                      clean: np.ndarray | None = None) -> tuple[np.ndarray, TrainReport]:
    """Train a fresh network on ``y`` alone and return the clamped estimate and a report.

    ``clean`` only feeds the report's quality numbers; it never reaches a loss.
    """
    cfg = cfg or TrainConfig()
    y = np.asarray(y, dtype=np.float64)
    squeeze = y.ndim == 2
    if squeeze:
        y = y[:, :, None]
    if y.ndim != 3 or min(y.shape[:2]) < MIN_SIZE:
        raise InputError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got shape {y.shape}")
    if clean is not None:
        clean = np.asarray(clean, dtype=np.float64).reshape(y.shape)

    net = build_network(y.shape[2], cfg.hidden, cfg.seed, cfg.loss.output_mode,
                        slope=cfg.slope, dtype=np.dtype(cfg.dtype))
    opt = _new_optimizer(cfg)
    report = TrainReport()
    if clean is not None:
        report.psnr_noisy = psnr(clean, y)

    t0 = time.perf_counter()
    pretrain(net, y, cfg, opt, report)
    report.wall_s_stage1 = time.perf_counter() - t0
    if clean is not None:
        report.psnr_stage1 = psnr(clean, final_image(net, y))
    logger.info("stage 1 done: loss=%.6g (%.1fs)", report.stage1_loss, report.wall_s_stage1)

    t0 = time.perf_counter()
    finetune(net, y, cfg, opt, report)
    report.wall_s_stage2 = time.perf_counter() - t0
    out = final_image(net, y)
    if clean is not None:
        report.psnr_final = psnr(clean, out)
        report.ssim_final = ssim(clean, out) if min(y.shape[:2]) >= 11 else None
    logger.info("stage 2 done: loss=%.6g (%.1fs)", report.stage2_loss, report.wall_s_stage2)
    return (out[:, :, 0] if squeeze else out), report
