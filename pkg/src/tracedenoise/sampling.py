"""Split one noisy image into two half-resolution noisy sub-images.

Each sub-image is a stride-2 cross-correlation of the image with a fixed 2x2
kernel, applied to every channel independently. The default kernels pick the
two diagonals of each 2x2 block, so the sub-images share no pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, conv2d
from .errors import ConfigError, InputError
from .network import Network, batch_to_image, denoise, image_to_batch


def _anti_diagonal() -> np.ndarray:
    return np.array([[0.0, 0.5], [0.5, 0.0]])


def _diagonal() -> np.ndarray:
    return np.array([[0.5, 0.0], [0.0, 0.5]])


@dataclass(frozen=True)
class Downsampler:
    k1: np.ndarray = field(default_factory=_anti_diagonal)
    k2: np.ndarray = field(default_factory=_diagonal)
    stride: int = 2

    def __post_init__(self):
        for name in ("k1", "k2"):
            k = np.asarray(getattr(self, name), dtype=np.float64)
            if k.shape != (2, 2):
                raise ConfigError(f"{name} must be 2x2, got {k.shape}")
            if np.any(k < 0) or not np.isclose(k.sum(), 1.0, rtol=0, atol=1e-12):
                raise ConfigError(f"{name} must be non-negative and sum to 1")
            object.__setattr__(self, name, k)
        if np.array_equal(self.k1, self.k2):
            raise ConfigError("k1 and k2 must differ")
        if self.stride != 2:
            raise ConfigError("stride is fixed at 2")


def _crop_even(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise InputError(f"image must be at least 2x2, got {h}x{w}")
    return img[: h - h % 2, : w - w % 2]


def _apply_kernel(kernel: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """Per-channel stride-2 filtering of an ``N x C x H x W`` array."""
    n, c, h, w = batch.shape
    k = Tensor(kernel.astype(batch.dtype).reshape(1, 1, 2, 2))
    out = conv2d(Tensor(batch.reshape(n * c, 1, h, w)), k, stride=2).data
    return out.reshape(n, c, h // 2, w // 2)


def downsample_batch(d: Downsampler, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """:func:`downsample_pair` for an even-sized ``N x C x H x W`` array."""
    return _apply_kernel(d.k1, batch), _apply_kernel(d.k2, batch)


def downsample_pair(d: Downsampler, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return the two ``H/2 x W/2 x C`` sub-images of ``y`` (odd sizes cropped to even)."""
    y = _crop_even(np.asarray(y))
    b1, b2 = downsample_batch(d, image_to_batch(y))
    return batch_to_image(b1), batch_to_image(b2)


def estimate_clean_batch(d: Downsampler, net: Network, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # .data drops the graph: no gradient reaches the weights through the estimates
    den = denoise(net, Tensor(batch)).data
    return downsample_batch(d, den)


def estimate_clean_subs(d: Downsampler, net: Network, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clean sub-image estimates ``k_i (x) denoise(net, y)``, gradient-stopped."""
    y = _crop_even(np.asarray(y))
    b1, b2 = estimate_clean_batch(d, net, image_to_batch(y, net.dtype))
    return batch_to_image(b1), batch_to_image(b2)
