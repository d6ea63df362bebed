"""Adam training loop with checkpointing, warm starts and dead-unit diagnostics."""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataset import load_arrays
from .losses import LossConfig, combined_loss
from .unet import Model, check_compatible, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

# |d swish / dx| < 1e-8 for every x below this (solved from the derivative)
SWISH_SATURATION = -21.45

HISTORY_FIELDS = ["epoch", "train_loss", "val_loss", "seconds", "dead_neurons"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 1
    seed: int = 0
    deterministic: bool = True
    warm_start: str | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    validation_fraction: float = 0.1
    checkpoint_every: int = 1
    max_steps: int | None = None
    dead_neuron_layer: str | None = None
    # start the head at the logit of the mean target so the sparse channels
    # do not first overshoot toward an all-zero output
    prior_bias: bool = True
    # random grid symmetries (flips, and 90 degree turns on square grids)
    # applied identically to input and target
    augment: bool = False

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------- Adam


def init_adam_state(params: dict[str, np.ndarray]) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict, t: int, cfg: TrainConfig) -> dict:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if t < 1:
        raise ValueError("Adam step index t must be >= 1")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name}")
    b1, b2 = cfg.beta1, cfg.beta2
    step = cfg.lr / (1 - b1**t)
    bc2 = 1 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m, v = state["m"][name], state["v"][name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (step * m / (np.sqrt(v / bc2) + cfg.eps)).astype(p.dtype)
    state["t"] = t
    return state


# ------------------------------------------------------------------ history


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    dead_neurons: list[int | None] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    initial_loss: float | None = None
    tag: str = "scratch"

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def rows(self) -> list[dict]:
        return [
            dict(zip(HISTORY_FIELDS, (i + 1, tr, va, s, d)))
            for i, (tr, va, s, d) in enumerate(zip(self.train_loss, self.val_loss, self.seconds, self.dead_neurons))
        ]

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        with open(out / "history.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, HISTORY_FIELDS, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: "" if v is None else v for k, v in row.items()})
        (out / "history.json").write_text(json.dumps(asdict(self), indent=1))


@dataclass
class TrainData:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray

    @classmethod
    def from_manifest(cls, manifest: dict, validation_fraction: float = 0.1, seed: int = 0) -> "TrainData":
        _, tx, ty = load_arrays(manifest, "train")
        _, vx, vy = load_arrays(manifest, "val")
        if len(vx) == 0 and validation_fraction > 0 and len(tx) > 1:
            order = np.random.default_rng([seed, 2]).permutation(len(tx))
            n_val = max(1, int(round(validation_fraction * len(tx))))
            vx, vy = tx[order[:n_val]], ty[order[:n_val]]
            tx, ty = tx[order[n_val:]], ty[order[n_val:]]
        return cls(tx, ty, vx, vy)


@dataclass
class TrainResult:
    model: Model
    history: TrainHistory
    optimizer_state: dict
    checkpoints: list[Path] = field(default_factory=list)


def _threads(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(1)


def set_prior_bias(model: Model, targets: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """Set the head bias to ``logit(mean target)`` per output channel; returns the bias."""
    p = np.clip(np.asarray(targets, dtype=float).mean(axis=(0, 2, 3)), floor, 1 - floor)
    bias = np.log(p / (1 - p)).astype(np.float32)
    model["head.bias"].data[...] = bias
    return bias


def grid_symmetry(a: np.ndarray, k: int) -> np.ndarray:
    """Element ``k`` (0..7) of the square's symmetry group on the last two axes.

    Propagation with a symmetric transfer function commutes with these, so a
    transformed hologram is the hologram of the transformed particle field.
    """
    if k >= 4:
        a = a[..., ::-1]
    return np.rot90(a, k % 4, axes=(-2, -1))


def augment_batch(x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply one random grid symmetry per sample, the same to input and target."""
    square = x.shape[-1] == x.shape[-2]
    ks = rng.integers(0, 8, len(x)) if square else rng.choice([0, 2, 4, 6], len(x))
    xs = np.stack([grid_symmetry(a, k) for a, k in zip(x, ks)])
    ys = np.stack([grid_symmetry(a, k) for a, k in zip(y, ks)])
    return np.ascontiguousarray(xs), np.ascontiguousarray(ys)


def evaluate_loss(model: Model, x: np.ndarray, y: np.ndarray, loss_cfg: LossConfig, batch_size: int = 16) -> float | None:
    """Sample-weighted mean loss over a dataset without recording a graph."""
    if len(x) == 0:
        return None
    total = 0.0
    with ad.no_grad():
        for s in range(0, len(x), batch_size):
            xb, yb = x[s:s + batch_size], y[s:s + batch_size]
            total += float(combined_loss(model(xb), yb, loss_cfg).data) * len(xb)
    return total / len(x)


def train(
    model: Model,
    data: TrainData | dict,
    cfg: TrainConfig,
    out_dir=None,
    optimizer_state: dict | None = None,
    tag: str = "scratch",
    probe: np.ndarray | None = None,
) -> TrainResult:
    """Train ``model`` in place with shuffled mini-batches and Adam.

    ``data`` is a TrainData or a dataset manifest. When ``out_dir`` is given,
    ``last.holonet`` and ``best.holonet`` are written every
    ``cfg.checkpoint_every`` epochs and at the end, and the history is
    written as CSV and JSON.
    """
    if isinstance(data, dict):
        data = TrainData.from_manifest(data, cfg.validation_fraction, cfg.seed)
    if model.arch.in_channels != data.train_x.shape[1] or model.arch.out_channels != data.train_y.shape[1]:
        raise TrainingError("model channels do not match the dataset (expected 3 in, 2 out)")
    if len(data.train_x) == 0 and cfg.epochs > 0:
        raise TrainingError("no training samples")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if cfg.prior_bias and optimizer_state is None and len(data.train_y):
        set_prior_bias(model, data.train_y)
    params = {k: p.data for k, p in model.params.items()}
    state = optimizer_state or init_adam_state(params)
    history = TrainHistory(tag=tag)
    result = TrainResult(model, history, state)
    best = math.inf
    probe = probe if probe is not None else data.train_x[: cfg.batch_size]
    steps = 0

    with _threads(cfg.deterministic):
        history.initial_loss = evaluate_loss(model, data.train_x, data.train_y, cfg.loss, cfg.batch_size)
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data.train_x))
            total, seen = 0.0, 0
            for b, s in enumerate(range(0, len(order), cfg.batch_size)):
                idx = np.sort(order[s:s + cfg.batch_size])
                xb, yb = data.train_x[idx], data.train_y[idx]
                if cfg.augment:
                    xb, yb = augment_batch(xb, yb, np.random.default_rng([cfg.seed, epoch, b, 3]))
                model.zero_grad()
                loss = combined_loss(model(xb), yb, cfg.loss)
                value = float(loss.data)
                if not math.isfinite(value):
                    if out is not None:
                        save_checkpoint(out / "last.holonet", model, state, {"epoch": epoch, "aborted": True})
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                loss.backward()
                grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
                try:
                    adam_step(params, grads, state, state["t"] + 1, cfg)
                except TrainingError as exc:
                    if out is not None:
                        save_checkpoint(out / "last.holonet", model, state, {"epoch": epoch, "aborted": True})
                    raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
                history.step_loss.append(value)
                total += value * len(idx)
                seen += len(idx)
                steps += 1
                if cfg.max_steps is not None and steps >= cfg.max_steps:
                    break
            history.train_loss.append(total / seen)
            val = evaluate_loss(model, data.val_x, data.val_y, cfg.loss, cfg.batch_size)
            history.val_loss.append(val)
            dead = None
            if cfg.dead_neuron_layer:
                dead = dead_neuron_count(model, probe, cfg.dead_neuron_layer)
            history.dead_neurons.append(dead)
            history.seconds.append(time.perf_counter() - t0)
            log.info("epoch %d train %.6g val %s", epoch, history.train_loss[-1], val)
            if out is not None and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
                score = val if val is not None else history.train_loss[-1]
                meta = {"epoch": epoch, "tag": tag}
                save_checkpoint(out / "last.holonet", model, state, meta)
                if score <= best:
                    best = score
                    save_checkpoint(out / "best.holonet", model, state, meta)
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
    if out is not None:
        if history.epochs == 0:
            save_checkpoint(out / "last.holonet", model, state, {"epoch": 0, "tag": tag})
            save_checkpoint(out / "best.holonet", model, state, {"epoch": 0, "tag": tag})
        history.write(out)
        result.checkpoints = [out / "last.holonet", out / "best.holonet"]
    return result


def transfer_train(
    base_checkpoint,
    data: TrainData | dict,
    cfg: TrainConfig,
    out_dir=None,
    expected: Model | None = None,
) -> TrainResult:
    """Warm start from ``base_checkpoint`` with a fresh optimizer state, then train."""
    model, _ = load_checkpoint(base_checkpoint)
    if expected is not None:
        check_compatible(expected.shape_table(), model.shape_table())
    return train(model, data, replace(cfg, prior_bias=False), out_dir, optimizer_state=None, tag="transfer")


def dead_neuron_count(model: Model, probe: np.ndarray, layer_name: str, threshold: float | None = None) -> int:
    """Channels of ``layer_name`` whose pre-activation never exceeds the dead threshold.

    The threshold is 0 for ReLU models and the Swish saturation point
    otherwise, over every pixel of every probe sample.
    """
    layers = model.conv_layers()
    if layer_name not in layers:
        raise KeyError(f"unknown layer {layer_name!r}; known layers: {', '.join(layers)}")
    if threshold is None:
        threshold = 0.0 if model.arch.activation == "relu" else SWISH_SATURATION
    capture: dict = {}
    with ad.no_grad():
        model.forward(np.asarray(probe, dtype=np.float32), capture=capture)
    pre = capture[layer_name]
    return int(np.sum(np.all(pre <= threshold, axis=(0, 2, 3))))


def last_conv_layer(model: Model) -> str:
    """Name of the final 3x3 convolution (the one feeding the head)."""
    return f"dec{len(model.arch.decoder)}.conv2"
