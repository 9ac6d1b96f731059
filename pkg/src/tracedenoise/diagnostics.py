"""Numerical checks of the loss-decomposition algebra.

Two kinds of check live here:

* exact identities (squared-norm expansion, trace form of the Frobenius norm,
  the pair-MSE decomposition) evaluated on random matrices;
* Monte-Carlo estimates of the cross term ``E[Tr(noise^T f(input))]`` under
  several pair constructions, with ``f`` a linear probe ``v -> M v + N``.
  Constructions with independent target noise give a statistically zero
  estimate; the ``correlated`` control (target noise equals input noise)
  gives ``sigma^2 Tr(M)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, frobenius_sq, inner_trace
from .errors import ConfigError, ContractError, DimensionError
from .losses import decomposition_residual
from .noise import derive_seed, standard_normal

SCENARIOS = ("n2n", "nac", "r2r", "correlated")
CHUNK = 10_000
NAC_SCALE = 1e-4


@dataclass(frozen=True)
class LinearProbe:
    M: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        N = np.asarray(self.N, dtype=np.float64).reshape(-1)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError(f"M must be square, got {M.shape}")
        if N.size == 1:
            N = np.full(M.shape[0], N.item())
        if N.shape != (M.shape[0],):
            raise DimensionError(f"N must have {M.shape[0]} entries, got {N.shape}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "N", N)

    @classmethod
    def identity(cls, d: int) -> "LinearProbe":
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def random(cls, d: int, seed: int, scale: float = 0.1) -> "LinearProbe":
        rng = np.random.default_rng(seed)
        M = np.eye(d) + scale * rng.standard_normal((d, d)) / math.sqrt(d)
        return cls(M, scale * rng.standard_normal(d))

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        """Apply to row vectors ``(trials, d)``."""
        return v @ self.M.T + self.N


@dataclass(frozen=True)
class TraceEstimate:
    mean: float
    se: float
    trials: int

    @property
    def z(self) -> float:
        return abs(self.mean) / self.se if self.se > 0 else math.inf


def frobenius_trace_residual(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return abs(frobenius_sq(Tensor(a)).item() - inner_trace(Tensor(a), Tensor(a)).item())


def verify_norm_expansion(a, b) -> float:
    """Largest residual of ``||a +- b||^2 = ||a||^2 + ||b||^2 +- 2 Tr(a^T b)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = frobenius_sq(Tensor(a)).item()
    nb = frobenius_sq(Tensor(b)).item()
    tr = inner_trace(Tensor(a), Tensor(b)).item()
    plus = abs(frobenius_sq(Tensor(a + b)).item() - (na + nb + 2.0 * tr))
    minus = abs(frobenius_sq(Tensor(a - b)).item() - (na + nb - 2.0 * tr))
    return max(plus, minus)


def _random_square(rng: np.random.Generator, max_n: int = 16) -> int:
    return int(rng.integers(2, max_n + 1))


def identity_suite(trials: int = 1000, seed: int = 0) -> dict[str, float]:
    """Worst residuals of the algebraic identities over ``trials`` random draws."""
    rng = np.random.default_rng(derive_seed(seed, 1))
    worst = {"frobenius_trace": 0.0, "norm_expansion": 0.0, "mse_decomposition": 0.0}
    for _ in range(trials):
        n = _random_square(rng)
        a, b = rng.standard_normal((2, n, n))
        worst["frobenius_trace"] = max(worst["frobenius_trace"], frobenius_trace_residual(a))
        worst["norm_expansion"] = max(worst["norm_expansion"], verify_norm_expansion(a, b))
        f, x1, y2 = rng.standard_normal((3, n, n))
        worst["mse_decomposition"] = max(worst["mse_decomposition"], decomposition_residual(f, x1, y2))
    return worst


def _chunk_values(scenario: str, probe: LinearProbe, clean: np.ndarray, sigma: float,
                  count: int, seed: int, D: np.ndarray | None, nac_scale: float) -> np.ndarray:
    d = probe.dim
    z = standard_normal((2, count, d), seed)
    if scenario == "n2n":
        n, target = sigma * z[0], sigma * z[1]
        inp = clean + n
    elif scenario == "nac":
        s = sigma * nac_scale
        n, m = s * z[0], s * z[1]
        inp = clean + n + m
        target = n
    elif scenario == "r2r":
        n, m = sigma * z[0], sigma * z[1]
        if D is None:
            inp = clean + n + m
            target = n - m
        else:
            inp = clean + n + m @ D  # rows of D^T m
            target = n - np.linalg.solve(D, m.T).T
    else:  # correlated control
        n = sigma * z[0]
        inp = clean + n
        target = n
    out = probe(inp)
    return np.array([inner_trace(Tensor(t), Tensor(o)).item() for t, o in zip(target, out)])


def mc_trace_term(scenario: str, probe: LinearProbe, sigma: float, trials: int, seed: int,
                  clean: np.ndarray | None = None, D: np.ndarray | None = None,
                  nac_scale: float = NAC_SCALE) -> TraceEstimate:
    """Monte-Carlo mean and standard error of the trace cross term.

    Trials are drawn in fixed-size chunks, each from a stream seeded by
    ``(seed, chunk index)``, so the estimate does not depend on evaluation order.
    ``nac_scale`` shrinks both noises of the noisier-input construction, which
    only claims a vanishing cross term when the noise is weak.
    """
    scenario = scenario.lower()
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if trials < 100:
        raise ContractError("at least 100 trials are required")
    if sigma <= 0:
        raise ContractError("sigma must be positive")
    dim = probe.dim
    if clean is None:
        clean = np.random.default_rng(derive_seed(seed, 0)).random(dim)
    clean = np.asarray(clean, dtype=np.float64).reshape(-1)
    if clean.size != dim:
        raise DimensionError(f"clean signal has {clean.size} entries, probe expects {dim}")
    if D is not None:
        D = np.asarray(D, dtype=np.float64)
        if D.shape != (dim, dim):
            raise DimensionError(f"D must be {dim}x{dim}")

    parts = []
    for k, start in enumerate(range(0, trials, CHUNK)):
        count = min(CHUNK, trials - start)
        parts.append(_chunk_values(scenario, probe, clean, sigma, count,
                                   derive_seed(seed, 1, k), D, nac_scale))
    vals = np.concatenate(parts)
    return TraceEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)), trials)


def expected_trace(scenario: str, probe: LinearProbe, sigma: float, nac_scale: float = NAC_SCALE) -> float:
    """Analytic expectation of :func:`mc_trace_term` for the linear probe."""
    tr = float(np.trace(probe.M))
    return {"n2n": 0.0, "r2r": 0.0, "nac": (sigma * nac_scale) ** 2 * tr,
            "correlated": sigma ** 2 * tr}[scenario.lower()]


def recorrupt_pair(y, sigma: float, seed: int, D: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(y + D^T m, y - D^{-1} m)`` with ``m ~ N(0, sigma^2 I)``; ``D`` defaults to identity."""
    if sigma <= 0:
        raise ContractError("sigma must be positive")
    y = np.asarray(y, dtype=np.float64)
    m = sigma * standard_normal(y.shape, seed)
    if D is None:
        return y + m, y - m
    D = np.asarray(D, dtype=np.float64)
    flat = m.reshape(-1)
    if D.shape != (flat.size, flat.size):
        raise DimensionError(f"D must be {flat.size}x{flat.size}")
    return y + (D.T @ flat).reshape(y.shape), y - np.linalg.solve(D, flat).reshape(y.shape)
