"""Channel-specific training losses.

Depth channel: elementwise Huber loss, mean-reduced. Centroid channel: MSE
blended with an epsilon-smoothed total-variation penalty on the prediction.
Every loss is an autodiff operator whose gradient flows to the prediction
only.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ShapeError, Tensor

TV_EPS = 1e-8


@dataclass
class LossConfig:
    delta: float = 0.002
    alpha: float = 1e-4
    depth_weight: float = 1.0
    centroid_weight: float = 1.0
    tv_mode: str = "squared"
    # "pixels": TV penalty divided by the pixel count (keeps the printed
    # MSE-vs-TV balance under mean reduction); "none": raw sum
    tv_scale: str = "pixels"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.tv_mode not in ("squared", "linear"):
            raise ValueError(f"tv_mode must be 'squared' or 'linear', got {self.tv_mode!r}")
        if self.tv_scale not in ("pixels", "none"):
            raise ValueError(f"tv_scale must be 'pixels' or 'none', got {self.tv_scale!r}")

    @classmethod
    def mse_only(cls) -> "LossConfig":
        return cls(delta=math.inf, alpha=0.0)

    def to_dict(self) -> dict:
        return asdict(self)


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _check(y: Tensor, x: np.ndarray, name: str):
    if y.shape != x.shape:
        raise ShapeError(f"{name}: prediction {y.shape} and target {x.shape} differ")


# numpy kernels returning (value, d value / d Y)


def _huber(r: np.ndarray, delta: float) -> tuple[float, np.ndarray]:
    a = np.abs(r)
    if math.isinf(delta):
        per = 0.5 * r * r
        g = r
    else:
        quad = a <= delta
        per = np.where(quad, 0.5 * r * r, delta * a - 0.5 * delta * delta)
        g = np.clip(r, -delta, delta)
    n = r.size
    return float(per.sum() / n), g / n


def _tv(img: np.ndarray) -> tuple[float, np.ndarray]:
    """Smoothed TV of the trailing two axes, summed per image: values (...,), grads."""
    dv = np.zeros_like(img)
    dh = np.zeros_like(img)
    dv[..., 1:, :] = img[..., 1:, :] - img[..., :-1, :]
    dh[..., :, 1:] = img[..., :, 1:] - img[..., :, :-1]
    mag = np.sqrt(dv * dv + dh * dh + TV_EPS * TV_EPS)
    value = mag.sum(axis=(-2, -1))
    qv, qh = dv / mag, dh / mag
    g = qv + qh
    g[..., :-1, :] -= qv[..., 1:, :]
    g[..., :, :-1] -= qh[..., :, 1:]
    return value, g


def _centroid(r: np.ndarray, y: np.ndarray, alpha: float, tv_mode: str, tv_scale: str) -> tuple[float, np.ndarray]:
    """(1 - alpha) * mean(r^2) + alpha * mean_over_images(TV(Y)^p), with the TV scale option."""
    n = r.size
    value = (1 - alpha) * float((r * r).sum()) / n
    grad = (1 - alpha) * 2 * r / n
    if alpha > 0:
        img = y.reshape(-1, *y.shape[-2:])
        tv, tv_grad = _tv(img)
        scale = img.shape[-1] * img.shape[-2] if tv_scale == "pixels" else 1.0
        tv = tv / scale
        tv_grad = tv_grad / scale
        m = img.shape[0]
        if tv_mode == "squared":
            value += alpha * float((tv * tv).sum()) / m
            tv_grad = tv_grad * (2 * tv)[:, None, None]
        else:
            value += alpha * float(tv.sum()) / m
        grad = grad + (alpha / m) * tv_grad.reshape(y.shape)
    return value, grad


def _scalar_op(value: float, grad: np.ndarray, y: Tensor, op: str) -> Tensor:
    def backward(g):
        return (grad * g,)

    return Tensor.from_op(np.array(value, dtype=y.data.dtype), (y,), backward, op)


def huber_loss(Y: Tensor, X, delta: float = 0.002) -> Tensor:
    """Mean elementwise Huber loss of prediction ``Y`` against target ``X``."""
    Y = Y if isinstance(Y, Tensor) else Tensor(Y)
    x = _values(X)
    _check(Y, x, "huber_loss")
    value, grad = _huber(Y.data - x, delta)
    return _scalar_op(value, grad, Y, "huber_loss")


def total_variation(Y: Tensor) -> Tensor:
    """Smoothed isotropic TV of an (h, w) image; missing neighbours count as zero differences."""
    Y = Y if isinstance(Y, Tensor) else Tensor(Y)
    if Y.data.ndim != 2:
        raise ShapeError(f"total_variation expects an (h, w) image, got {Y.shape}")
    value, grad = _tv(Y.data)
    return _scalar_op(float(value), grad, Y, "total_variation")


def centroid_loss(Y: Tensor, X, alpha: float = 1e-4, tv_mode: str = "squared", tv_scale: str = "pixels") -> Tensor:
    Y = Y if isinstance(Y, Tensor) else Tensor(Y)
    x = _values(X)
    _check(Y, x, "centroid_loss")
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    value, grad = _centroid(Y.data - x, Y.data, alpha, tv_mode, tv_scale)
    return _scalar_op(value, grad, Y, "centroid_loss")


def combined_loss(pred: Tensor, target, cfg: LossConfig | None = None) -> Tensor:
    """Weighted Huber (channel 0) plus centroid loss (channel 1) over a (B, 2, H, W) batch."""
    cfg = cfg or LossConfig()
    target = _values(target)
    _check(pred, target, "combined_loss")
    if pred.data.ndim != 4 or pred.shape[1] != 2:
        raise ShapeError(f"combined_loss expects (B, 2, H, W), got {pred.shape}")
    y = pred.data
    v0, g0 = _huber(y[:, 0] - target[:, 0], cfg.delta)
    v1, g1 = _centroid(y[:, 1] - target[:, 1], y[:, 1], cfg.alpha, cfg.tv_mode, cfg.tv_scale)
    grad = np.empty_like(y)
    grad[:, 0] = cfg.depth_weight * g0
    grad[:, 1] = cfg.centroid_weight * g1
    value = cfg.depth_weight * v0 + cfg.centroid_weight * v1
    return _scalar_op(value, grad, pred, "combined_loss")
