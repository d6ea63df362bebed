"""Minimal reverse-mode automatic differentiation over dense NCHW tensors.

Only the operators the U-net needs are provided. Each operator computes its
forward value with numpy and records a closure mapping the output gradient
to input gradients. ``Tensor.backward`` walks the graph in reverse
topological order, visiting every node once and accumulating gradients of
nodes used more than once.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference); saves the im2col buffers."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        """Wrap an operator result; ``backward(g)`` returns one gradient per parent."""
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.op = op
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            # interior buffers are released once consumed
            node.grad = None
            node._backward = None
            node._parents = ()


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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------- conv


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (C*k*k, B*H*W) columns for a stride-1 same-padded kernel."""
    b, c, h, w = x.shape
    if k == 1:
        return x.transpose(1, 0, 2, 3).reshape(c, b * h * w)
    p = k // 2
    xp = np.zeros((c, b, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, b, h, w), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[:, ky, kx] = xp[:, :, ky:ky + h, kx:kx + w]
    return cols.reshape(c * k * k, b * h * w)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int) -> np.ndarray:
    b, c, h, w = shape
    if k == 1:
        return cols.reshape(c, b, h, w).transpose(1, 0, 2, 3)
    p = k // 2
    cols = cols.reshape(c, k, k, b, h, w)
    xp = np.zeros((c, b, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky:ky + h, kx:kx + w] += cols[:, ky, kx]
    return xp[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 cross-correlation with an odd square kernel.

    ``x``: (B, C_in, H, W), ``weight``: (C_out, C_in, k, k), ``bias``: (C_out,).
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    b, c, h, w = x.shape
    c_out, c_in, k, k2 = weight.shape
    if c_in != c or k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d weight {weight.shape} incompatible with input {x.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({c_out},)")
    cols = _im2col(x.data, k)
    wm = weight.data.reshape(c_out, -1)
    out = wm @ cols
    if bias is not None:
        out += bias.data[:, None]
    y = out.reshape(c_out, b, h, w).transpose(1, 0, 2, 3)
    y = np.ascontiguousarray(y)

    def backward(g):
        gm = g.transpose(1, 0, 2, 3).reshape(c_out, b * h * w)
        gx = _col2im(wm.T @ gm, x.shape, k) if x.requires_grad else None
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=1) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(y, parents, backward, "conv2d")


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties route the gradient to the first element in row-major order."""
    x = _as_tensor(x)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return Tensor.from_op(y, (x,), backward, "maxpool2d")


def upconv2d(x: Tensor, weight: Tensor) -> Tensor:
    """Transposed convolution with a 2x2 kernel and stride 2 (no overlap).

    ``x``: (B, C_in, H, W), ``weight``: (C_in, C_out, 2, 2) -> (B, C_out, 2H, 2W).
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    b, c, h, w = x.shape
    if weight.data.ndim != 4 or weight.shape[0] != c or weight.shape[2:] != (2, 2):
        raise ShapeError(f"upconv2d weight {weight.shape} incompatible with input {x.shape}")
    c_out = weight.shape[1]
    xm = x.data.transpose(1, 0, 2, 3).reshape(c, b * h * w)
    wm = weight.data.reshape(c, c_out * 4)
    cols = (wm.T @ xm).reshape(c_out, 2, 2, b, h, w)
    y = np.ascontiguousarray(cols.transpose(3, 0, 4, 1, 5, 2).reshape(b, c_out, 2 * h, 2 * w))

    def backward(g):
        gc = g.reshape(b, c_out, h, 2, w, 2).transpose(1, 3, 5, 0, 2, 4).reshape(c_out * 4, b * h * w)
        gx = (wm @ gc).reshape(c, b, h, w).transpose(1, 0, 2, 3) if x.requires_grad else None
        gw = (xm @ gc.T).reshape(weight.shape) if weight.requires_grad else None
        return gx, gw

    return Tensor.from_op(y, (x, weight), backward, "upconv2d")


# ------------------------------------------------------------- structural


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Stack along the channel axis, ``a`` first."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != b.data.ndim or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat needs matching batch/spatial dims, got {a.shape} and {b.shape}")
    ca = a.shape[1]
    y = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return Tensor.from_op(y, (a, b), backward, "concat")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs identical shapes, got {a.shape} and {b.shape}")

    def backward(g):
        return g, g

    return Tensor.from_op(a.data + b.data, (a, b), backward, "add")


# ------------------------------------------------------------- activations


def _logistic(x: np.ndarray) -> np.ndarray:
    # expit keeps tiny positive outputs for very negative x; a 1 + tanh form
    # rounds to exactly 0 in float32 below about -17 and kills the gradient
    return expit(x)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = _logistic(x.data)

    def backward(g):
        return (g * s * (1 - s),)

    return Tensor.from_op(s, (x,), backward, "sigmoid")


def swish(x: Tensor) -> Tensor:
    """``x / (1 + exp(-x))`` elementwise."""
    x = _as_tensor(x)
    s = _logistic(x.data)
    f = x.data * s

    def backward(g):
        return (g * (f + s * (1 - f)),)

    return Tensor.from_op(f, (x,), backward, "swish")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(x.data * mask, (x,), backward, "relu")


def swish_grad(x: np.ndarray) -> np.ndarray:
    s = _logistic(np.asarray(x, dtype=float))
    f = x * s
    return f + s * (1 - f)


# ------------------------------------------------------------ grad check


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    tolerance: float
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-6,
    kink_tol: float = 0.1,
) -> GradCheckReport:
    """Compare analytic gradients of ``op`` with central differences.

    A non-scalar output is reduced with a fixed random projection. Entries
    where the one-sided differences disagree by more than ``kink_tol``
    (relative) sit on a non-differentiable point and are skipped.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*tensors)
    proj = np.random.default_rng(seed).standard_normal(out.shape) if out.data.size > 1 else np.ones(out.shape)

    def f(vals):
        with no_grad():
            return float(np.sum(op(*[Tensor(v) for v in vals]).data * proj))

    base = f(arrays)
    out.backward(proj)
    worst, checked, skipped, per_input = 0.0, 0, 0, []
    for i, arr in enumerate(arrays):
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arr)
        input_worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            fp = f(arrays)
            arr[idx] = orig - step
            fm = f(arrays)
            arr[idx] = orig
            d_plus, d_minus = (fp - base) / step, (base - fm) / step
            if abs(d_plus - d_minus) > kink_tol * max(abs(d_plus), abs(d_minus), floor):
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * step)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            input_worst = max(input_worst, rel)
            checked += 1
        per_input.append(input_worst)
        worst = max(worst, input_worst)
    return GradCheckReport(worst, checked, skipped, tolerance, per_input)
