"""Training objectives: pair MSE, trace-constrained loss and their combination.

All image arguments are ``H x W x C`` arrays. Losses are mean-normalised so the
trace weight does not depend on resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, absolute, add, frobenius_sq, inner_trace, mul, select, sub
from .errors import ConfigError, ContractError, DimensionError
from .network import Network, OutputMode, denoise, image_to_batch
from .sampling import Downsampler, downsample_batch, estimate_clean_batch, _crop_even


@dataclass(frozen=True)
class LossConfig:
    trcl: bool = True
    mutual: bool = True
    residual: bool = True
    lambda0: float = 1.0
    symmetric_mse: bool = True

    def __post_init__(self):
        if self.mutual and not self.trcl:
            raise ConfigError("mutual form requires the trace loss to be enabled")
        if self.lambda0 < 0 or not math.isfinite(self.lambda0):
            raise ConfigError(f"lambda0 must be a finite non-negative number, got {self.lambda0}")

    @property
    def label(self) -> str:
        for name, preset in ABLATIONS.items():
            if (preset.trcl, preset.mutual, preset.residual) == (self.trcl, self.mutual, self.residual):
                return name
        return "custom"

    @property
    def output_mode(self) -> OutputMode:
        return OutputMode.RESIDUAL if self.residual else OutputMode.DIRECT


# cumulative ablation ladder: trace loss, then mutual form, then residual output
ABLATIONS = {
    "S1": LossConfig(trcl=False, mutual=False, residual=False),
    "S2": LossConfig(trcl=True, mutual=False, residual=False),
    "S3": LossConfig(trcl=True, mutual=True, residual=False),
    "S4": LossConfig(trcl=True, mutual=True, residual=True),
}


def ablation(label: str, **overrides) -> LossConfig:
    try:
        base = ABLATIONS[label.upper()]
    except KeyError:
        raise ConfigError(f"unknown ablation label {label!r}; expected one of {sorted(ABLATIONS)}") from None
    if not overrides:
        return base
    fields = {k: getattr(base, k) for k in ("trcl", "mutual", "residual", "lambda0", "symmetric_mse")}
    fields.update(overrides)
    return LossConfig(**fields)


def _batch(img, dtype) -> np.ndarray:
    img = np.asarray(img)
    return image_to_batch(img, dtype)


def _same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"operands must share one shape, got {sorted(shapes)}")


def _pair_outputs(net: Network, b1: np.ndarray, b2: np.ndarray, need_second: bool):
    if not need_second:
        return denoise(net, Tensor(b1)), None
    both = denoise(net, Tensor(np.concatenate([b1, b2], axis=0)))
    return select(both, 0), select(both, 1)


def _mse(d1: Tensor, b2: np.ndarray, d2: Tensor | None, b1: np.ndarray) -> Tensor:
    fwd = mul(frobenius_sq(sub(d1, b2)), 1.0 / d1.size)
    if d2 is None:
        return fwd
    bwd = mul(frobenius_sq(sub(d2, b1)), 1.0 / d2.size)
    return mul(add(fwd, bwd), 0.5)


def _trace_term(x_hat: np.ndarray, y_other: np.ndarray, d_self: Tensor) -> Tensor:
    # |<x_hat - y_other, f(y_self) - x_hat>| / n ; only the second factor carries gradient
    t = inner_trace(Tensor(x_hat - y_other), sub(d_self, x_hat))
    return absolute(mul(t, 1.0 / d_self.size))


def _trace(d1, d2, b1, b2, x1, x2, mutual: bool) -> Tensor:
    plain = _trace_term(x1, b2, d1)
    if not mutual:
        return plain
    return add(mul(plain, 0.5), mul(_trace_term(x2, b1, d2), 0.5))


def mse_pair_loss(net: Network, y1, y2, symmetric: bool = True) -> Tensor:
    """Mean squared error of ``denoise(y1)`` against ``y2`` (and the swapped direction)."""
    b1, b2 = _batch(y1, net.dtype), _batch(y2, net.dtype)
    _same_shape(b1, b2)
    d1, d2 = _pair_outputs(net, b1, b2, symmetric)
    return _mse(d1, b2, d2, b1)


def trace_constraint_loss(net: Network, y1, y2, x1_hat, x2_hat, mutual: bool = True) -> Tensor:
    """Absolute normalised trace between the target gap and the estimate gap.

    ``x1_hat``/``x2_hat`` are treated as constants.
    """
    dt = net.dtype
    b1, b2 = _batch(y1, dt), _batch(y2, dt)
    x1, x2 = _batch(x1_hat, dt), _batch(x2_hat, dt)
    _same_shape(b1, b2, x1, x2)
    d1, d2 = _pair_outputs(net, b1, b2, mutual)
    return _trace(d1, d2, b1, b2, x1, x2, mutual)


def fine_tune_loss(net: Network, y, d: Downsampler, cfg: LossConfig, lam: float) -> Tensor:
    """``mse_pair_loss + lam * trace_constraint_loss`` on the sub-images of ``y``.

    The clean sub-image estimates come from the current weights but carry no
    gradient. With the trace loss disabled (or ``lam == 0``) this is exactly
    :func:`mse_pair_loss`.
    """
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    if cfg.output_mode is not net.mode:
        raise ConfigError(f"loss config expects {cfg.output_mode.value} output but network is {net.mode.value}")
    # sub-images built at 64-bit then cast, matching downsample_pair + mse_pair_loss
    full64 = _batch(_crop_even(np.asarray(y, dtype=np.float64)), None)
    b1, b2 = (b.astype(net.dtype, copy=False) for b in downsample_batch(d, full64))
    if not cfg.trcl or lam == 0.0:
        d1, d2 = _pair_outputs(net, b1, b2, cfg.symmetric_mse)
        return _mse(d1, b2, d2, b1)
    x1, x2 = estimate_clean_batch(d, net, full64.astype(net.dtype, copy=False))
    d1, d2 = _pair_outputs(net, b1, b2, cfg.symmetric_mse or cfg.mutual)
    mse = _mse(d1, b2, d2 if cfg.symmetric_mse else None, b1)
    return add(mse, mul(_trace(d1, d2, b1, b2, x1, x2, cfg.mutual), float(lam)))


def lambda_schedule(t: int, total: int, lambda0: float) -> float:
    """Cosine annealing from ``lambda0`` at ``t = 0`` down to 0 at ``t = total``."""
    if total < 1:
        raise ContractError(f"total steps must be >= 1, got {total}")
    if not 0 <= t <= total:
        raise ContractError(f"step {t} outside [0, {total}]")
    if t == total:
        return 0.0
    return lambda0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


def decomposition_residual(f_out, x1, y2) -> float:
    """Gap between ``||f - y2||^2`` and its expansion around ``x1`` (sums, not means)."""
    f_out, x1, y2 = (np.asarray(a, dtype=np.float64) for a in (f_out, x1, y2))
    _same_shape(f_out, x1, y2)
    lhs = frobenius_sq(Tensor(f_out - y2)).item()
    rhs = (frobenius_sq(Tensor(f_out - x1)).item()
           + frobenius_sq(Tensor(x1 - y2)).item()
           + 2.0 * inner_trace(Tensor(x1 - y2), Tensor(f_out - x1)).item())
    return abs(lhs - rhs)
