"""Seeded Gaussian and Poisson noise synthesis.

Gaussian levels are given in 0-255 units, Poisson levels as a photon scale
``lam`` with ``y = Poisson(lam * x) / lam``. Noisy images are never clipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def derive_seed(master: int, *keys: int) -> int:
    """Hash a master seed and integer keys into an independent 63-bit seed."""
    ss = np.random.SeedSequence([int(master), *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _stream(seed: int) -> np.random.Generator:
    # Philox is counter-based: the draw sequence is fixed by the seed alone
    return np.random.Generator(np.random.Philox(int(seed)))


def standard_normal(shape, seed: int) -> np.ndarray:
    """Box-Muller normals from a Philox uniform stream."""
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u = _stream(seed).random((2, half))
    r = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u lies in (0, 1]
    theta = 2.0 * np.pi * u[1]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape)


def add_gaussian(x: np.ndarray, sigma255: float, seed: int) -> np.ndarray:
    if sigma255 < 0:
        raise ConfigError(f"sigma must be non-negative, got {sigma255}")
    x = np.asarray(x, dtype=np.float64)
    if sigma255 == 0:
        return x.copy()
    return x + (sigma255 / 255.0) * standard_normal(x.shape, seed)


def add_poisson(x: np.ndarray, lam: float, seed: int) -> np.ndarray:
    if lam <= 0:
        raise ConfigError(f"poisson scale must be positive, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    counts = _stream(seed).poisson(lam * np.clip(x, 0.0, None))
    return counts / lam


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gauss", "poisson"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gauss" and self.level < 0:
            raise ConfigError("gaussian sigma must be >= 0")
        if self.kind == "poisson" and self.level <= 0:
            raise ConfigError("poisson scale must be > 0")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "NoiseSpec":
        """Parse ``"gauss:25"`` or ``"poisson:50"``."""
        kind, sep, value = text.strip().partition(":")
        kind = kind.lower()
        if kind == "gaussian":
            kind = "gauss"
        if not sep:
            raise ConfigError(f"noise spec {text!r} must look like kind:level")
        try:
            level = float(value)
        except ValueError:
            raise ConfigError(f"bad noise level in {text!r}") from None
        return cls(kind, level, seed)

    def __str__(self) -> str:
        return f"{self.kind}:{self.level:g}"

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "gauss":
            return add_gaussian(x, self.level, self.seed)
        return add_poisson(x, self.level, self.seed)
