"""Lightweight three-layer convolutional denoiser.

conv3x3(C->hidden) -> LeakyReLU -> conv3x3(hidden->hidden) -> LeakyReLU -> conv1x1(hidden->C)

In ``residual`` mode the network predicts the noise and the clean estimate is
``y - f(y)``; in ``direct`` mode the output is the estimate itself.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .autodiff import Tensor, conv2d, leaky_relu, sub
from .errors import ConfigError, DimensionError, InputError

MAGIC = b"TDNW"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")

PARAM_ORDER = ("conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
               "conv3.weight", "conv3.bias")


class OutputMode(str, Enum):
    DIRECT = "direct"
    RESIDUAL = "residual"


@dataclass
class Network:
    params: dict[str, Tensor]
    channels: int
    hidden: int
    slope: float = 0.2
    mode: OutputMode = OutputMode.RESIDUAL

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: p.grad for k, p in self.params.items()}

    def copy(self) -> "Network":
        params = {k: Tensor(p.data.copy(), requires_grad=p.requires_grad) for k, p in self.params.items()}
        return Network(params, self.channels, self.hidden, self.slope, self.mode)

    @property
    def dtype(self):
        return self.params["conv1.weight"].dtype


def build_network(channels: int, hidden: int = 48, seed: int = 0,
                  mode: OutputMode | str = OutputMode.RESIDUAL,
                  slope: float = 0.2, dtype=np.float64) -> Network:
    """Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)) from a seeded generator; biases zero."""
    if channels <= 0:
        raise ConfigError(f"channels must be positive, got {channels}")
    if hidden < 1:
        raise ConfigError(f"hidden width must be >= 1, got {hidden}")
    mode = OutputMode(mode)
    rng = np.random.default_rng(seed)
    shapes = {
        "conv1": (hidden, channels, 3, 3),
        "conv2": (hidden, hidden, 3, 3),
        "conv3": (channels, hidden, 1, 1),
    }
    params: dict[str, Tensor] = {}
    for name, shape in shapes.items():
        fan_in = shape[1] * shape[2] * shape[3]
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape)
        params[f"{name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(shape[0], dtype=dtype), requires_grad=True)
    return Network(params, channels, hidden, slope, mode)


def _check_input(net: Network, y: Tensor) -> None:
    if y.data.ndim != 4 or y.shape[1] != net.channels:
        raise DimensionError(f"expected N x {net.channels} x H x W input, got {y.shape}")


def forward(net: Network, y: Tensor) -> Tensor:
    """Raw network output ``f(y)`` for an ``N x C x H x W`` tensor."""
    _check_input(net, y)
    p = net.params
    h = leaky_relu(conv2d(y, p["conv1.weight"], p["conv1.bias"], padding=1), net.slope)
    h = leaky_relu(conv2d(h, p["conv2.weight"], p["conv2.bias"], padding=1), net.slope)
    return conv2d(h, p["conv3.weight"], p["conv3.bias"])


def denoise(net: Network, y: Tensor) -> Tensor:
    """Clean-image estimate; unclamped so it can sit inside a loss."""
    out = forward(net, y)
    if net.mode is OutputMode.RESIDUAL:
        return sub(y, out)
    return out


def image_to_batch(img: np.ndarray, dtype=None) -> np.ndarray:
    """``H x W x C`` (or ``H x W``) image to a ``1 x C x H x W`` array."""
    if img.ndim == 2:
        img = img[:, :, None]
    arr = np.ascontiguousarray(np.transpose(img, (2, 0, 1))[None])
    return arr.astype(dtype, copy=False) if dtype is not None else arr


def batch_to_image(arr: np.ndarray) -> np.ndarray:
    """``N x C x H x W`` array (N == 1) back to ``H x W x C``."""
    return np.ascontiguousarray(np.transpose(arr[0], (1, 2, 0)))


def denoise_image(net: Network, img: np.ndarray) -> np.ndarray:
    """Run :func:`denoise` on an ``H x W x C`` image and return an unclamped image (float64)."""
    y = Tensor(image_to_batch(img, net.dtype))
    return batch_to_image(denoise(net, y).data).astype(np.float64)


def save_weights(net: Network, path: str | Path) -> None:
    """Write a snapshot: 16-byte header then float32 little-endian parameters."""
    body = np.concatenate([net.params[k].data.astype("<f4").reshape(-1) for k in PARAM_ORDER])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, net.channels, net.hidden))
        fh.write(body.tobytes())


def load_weights(path: str | Path, mode: OutputMode | str = OutputMode.RESIDUAL,
                 slope: float = 0.2, dtype=np.float32) -> Network:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated weight file")
    magic, version, channels, hidden = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise InputError(f"{path}: not a weight snapshot (magic={magic!r}, version={version})")
    net = build_network(channels, hidden, seed=0, mode=mode, slope=slope, dtype=dtype)
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if flat.size != net.parameter_count():
        raise InputError(f"{path}: expected {net.parameter_count()} values, found {flat.size}")
    offset = 0
    for k in PARAM_ORDER:
        p = net.params[k]
        p.data = flat[offset:offset + p.size].reshape(p.shape).astype(dtype)
        offset += p.size
    return net
