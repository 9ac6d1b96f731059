"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Only the operations the denoiser needs are provided. Elementwise binary
operations require identical shapes (Python scalars are the one exception);
there is no general broadcasting.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError


class Tensor:
    """Array node of the differentiation graph.

    ``grad`` is allocated lazily by :func:`backward` and accumulates across
    calls until :meth:`zero_grad` clears it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple["Tensor", ...] = (), _backward=None, op: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported rank 4")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    # elementwise arithmetic -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (),
                  _backward=backward_fn if needs else None, op=op)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary_operands(a, b) -> tuple[Tensor, Tensor | float]:
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if isinstance(b, (int, float, np.floating)) and not isinstance(b, bool):
        return a, float(b)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a, b = b, a
    a, b = _binary_operands(a, b)
    if isinstance(b, float):
        return _make(a.data + b, (a,), lambda g: (g,), "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        if isinstance(a, (int, float)):
            return add(mul(b, -1.0), float(a))
        a = Tensor(np.asarray(a, dtype=b.dtype))
    a, b = _binary_operands(a, b)
    if isinstance(b, float):
        return _make(a.data - b, (a,), lambda g: (g,), "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a, b = b, a
    a, b = _binary_operands(a, b)
    if isinstance(b, float):
        s = b
        return _make(a.data * s, (a,), lambda g: (g * s,), "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    shape = x.shape
    return _make(np.sum(x.data), (x,), lambda g: (np.full(shape, g, dtype=x.dtype),), "sum")


def mean(x: Tensor) -> Tensor:
    return mul(total(x), 1.0 / x.size)


def absolute(x: Tensor) -> Tensor:
    # subgradient 0 at the kink
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """Elementwise ``max(x, slope*x)``; the derivative at 0 is ``slope``."""
    if not 0.0 < slope < 1.0:
        raise ContractError(f"slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    neg = x.data <= 0
    out = x.data.copy()
    out[neg] *= slope

    def _bw(g):
        gx = g.copy()
        gx[neg] *= slope
        return (gx,)

    return _make(out, (x,), _bw, "leaky_relu")


def frobenius_sq(x: Tensor) -> Tensor:
    """Squared Frobenius norm: the sum of squared elements."""
    x = as_tensor(x)
    xd = x.data
    return _make(np.sum(xd * xd), (x,), lambda g: (2.0 * g * xd,), "frobenius_sq")


def inner_trace(a: Tensor, b: Tensor) -> Tensor:
    """``Tr(a^T b)`` computed as the elementwise product sum (no matrix product)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"inner_trace needs equal shapes, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(np.sum(ad * bd), (a, b), lambda g: (g * bd, g * ad), "inner_trace")


def select(x: Tensor, index: int) -> Tensor:
    """Pick one entry along the leading (batch) axis, keeping the axis."""
    shape = x.shape

    def _bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g[0]
        return (out,)

    return _make(x.data[index:index + 1], (x,), _bw, "select")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an ``N x C x H x W`` input with an ``O x C x kh x kw`` kernel.

    Zero padding, no kernel flip. Implemented with an im2col matrix product.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError("conv2d expects rank-4 input and kernel")
    if stride < 1 or padding < 0:
        raise ContractError(f"invalid stride={stride} / padding={padding}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"input has {c} channels but kernel expects {kc}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"bias shape {bias.shape} does not match {o} output channels")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # columns laid out (C*kh*kw, N*Ho*Wo) so the gather copies along contiguous rows
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
    wmat = kernel.data.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(o, n, ho, wo)
    out = out.transpose(1, 0, 2, 3) if n > 1 else out.reshape(1, o, ho, wo)
    out = np.ascontiguousarray(out)

    def _bw(g):
        gm = g.transpose(1, 0, 2, 3).reshape(o, -1)
        grads = []
        if x.requires_grad:
            dcols = (wmat.T @ gm).reshape(c, kh, kw, n, ho, wo)
            dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, i, j].transpose(1, 0, 2, 3)
            grads.append(dxp[:, :, padding:padding + h, padding:padding + w])
        else:
            grads.append(None)
        grads.append((gm @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None)
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, _bw, "conv2d")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Intermediate gradients live only for the duration of the call, so
    repeated calls accumulate on leaves and nowhere else.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (test oracle)."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    base = np.array(as_tensor(x).data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)

    def _eval(arr):
        v = f(Tensor(arr))
        return v.item() if isinstance(v, Tensor) else float(v)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = _eval(base)
        flat[i] = orig - eps
        fm = _eval(base)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
