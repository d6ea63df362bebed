"""Residual/Swish U-net over the autodiff core, plus the checkpoint format.

Layout: four encoder blocks joined by 2x2 max pooling, three decoder blocks
joined by stride-2 up-convolutions, mirror-order skip concatenation, an
additive residual shortcut inside every block and a 1x1 sigmoid head.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {"swish": ad.swish, "relu": ad.relu}

CKPT_MAGIC = b"HOLONET1"
CKPT_SCHEMA = 1


class ArchError(ValueError):
    pass


@dataclass
class ArchConfig:
    encoder: list[int] = field(default_factory=lambda: [64, 128, 256, 512])
    decoder: list[int] = field(default_factory=lambda: [256, 128, 64])
    in_channels: int = 3
    out_channels: int = 2
    activation: str = "swish"
    residual: bool = True
    seed: int = 0

    def __post_init__(self):
        self.encoder = [int(c) for c in self.encoder]
        self.decoder = [int(c) for c in self.decoder]
        if len(self.encoder) < 2 or len(self.decoder) != len(self.encoder) - 1:
            raise ArchError(
                f"need n encoders and n-1 decoders, got {len(self.encoder)} and {len(self.decoder)}"
            )
        if min(self.encoder + self.decoder) < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ArchError("channel counts must be positive")
        if self.activation not in ACTIVATIONS:
            raise ArchError(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")

    @property
    def divisor(self) -> int:
        return 2 ** (len(self.encoder) - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def layer_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter name -> shape table for ``arch``."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, c_in, c_out, k):
        shapes[f"{name}.weight"] = (c_out, c_in, k, k)
        shapes[f"{name}.bias"] = (c_out,)

    c_prev = arch.in_channels
    for i, c in enumerate(arch.encoder, start=1):
        conv(f"enc{i}.conv1", c_prev, c, 3)
        conv(f"enc{i}.conv2", c, c, 3)
        if arch.residual and c_prev != c:
            conv(f"enc{i}.proj", c_prev, c, 1)
        c_prev = c
    n = len(arch.encoder)
    for j, c in enumerate(arch.decoder, start=1):
        skip = arch.encoder[n - 1 - j]
        shapes[f"up{j}.weight"] = (c_prev, c, 2, 2)
        conv(f"dec{j}.conv1", skip + c, c, 3)
        conv(f"dec{j}.conv2", c, c, 3)
        c_prev = c
    conv("head", c_prev, arch.out_channels, 1)
    return shapes


def he_uniform(shape: tuple[int, ...], rng: np.random.Generator, upconv: bool = False, gain: float = 2.0) -> np.ndarray:
    """Uniform init with variance gain / fan_in (2 for layers feeding an activation, 1 for linear ones)."""
    # up-convolutions: each output pixel sees exactly one tap per input channel
    fan_in = shape[0] if upconv else int(np.prod(shape[1:]))
    bound = np.sqrt(3.0 * gain / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Model:
    """Parameter registry plus the forward pass of the configured U-net."""

    def __init__(self, arch: ArchConfig, params: dict[str, Tensor]):
        self.arch = arch
        self.params = params
        self._act = ACTIVATIONS[arch.activation]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def shape_table(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.params.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        check_compatible(self.shape_table(), {k: tuple(v.shape) for k, v in state.items()})
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float32)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def conv_layers(self) -> list[str]:
        return [k[: -len(".weight")] for k in self.params if k.endswith(".weight") and not k.startswith("up")]

    def _conv(self, name, x):
        return ad.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def _block(self, name, x, shortcut, capture):
        pre1 = self._conv(f"{name}.conv1", x)
        h = self._act(pre1)
        pre2 = self._conv(f"{name}.conv2", h)
        out = self._act(pre2)
        if capture is not None:
            capture[f"{name}.conv1"] = pre1.data
            capture[f"{name}.conv2"] = pre2.data
        if self.arch.residual:
            if f"{name}.proj.weight" in self.params:
                shortcut = self._conv(f"{name}.proj", shortcut)
            out = ad.add(out, shortcut)
        return out

    def forward(self, x, capture: dict | None = None) -> Tensor:
        """Map a (B, in_channels, H, W) batch to (B, out_channels, H, W) in (0, 1).

        ``capture``, when given, receives the pre-activation array of every
        3x3 convolution keyed by layer name.
        """
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
        if x.data.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise ad.ShapeError(f"expected (B, {self.arch.in_channels}, H, W) input, got {x.shape}")
        d = self.arch.divisor
        if x.shape[2] % d or x.shape[3] % d:
            raise ad.ShapeError(
                f"spatial dims {x.shape[2]}x{x.shape[3]} must be divisible by {d} "
                f"({len(self.arch.encoder) - 1} pooling stages)"
            )
        skips = []
        h = x
        for i in range(1, len(self.arch.encoder) + 1):
            if i > 1:
                h = ad.maxpool2d(h)
            h = self._block(f"enc{i}", h, h, capture)
            skips.append(h)
        skips.pop()
        for j in range(1, len(self.arch.decoder) + 1):
            up = ad.upconv2d(h, self.params[f"up{j}.weight"])
            h = self._block(f"dec{j}", ad.concat(skips.pop(), up), up, capture)
        logits = self._conv("head", h)
        if capture is not None:
            capture["head"] = logits.data
        return ad.sigmoid(logits)

    __call__ = forward

    def predict(self, x, batch_size: int = 8) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        outs = []
        with ad.no_grad():
            for s in range(0, len(x), batch_size):
                outs.append(self.forward(x[s:s + batch_size]).data)
        return np.concatenate(outs) if outs else np.zeros((0, self.arch.out_channels, *x.shape[2:]), np.float32)


def build_model(arch: ArchConfig) -> Model:
    rng = np.random.default_rng(arch.seed)
    params = {}
    n_blocks = len(arch.encoder) + len(arch.decoder)
    for name, shape in layer_shapes(arch).items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            linear = name.startswith(("up", "head")) or ".proj." in name
            gain = 1.0 if linear else 2.0
            if arch.residual and name.endswith(".conv2.weight"):
                # shrink each residual branch so the summed shortcuts keep unit
                # scale; otherwise the additions compound and saturate the head
                gain /= n_blocks
            data = he_uniform(shape, rng, upconv=name.startswith("up"), gain=gain)
        params[name] = Tensor(data, requires_grad=True)
    return Model(arch, params)


def check_compatible(expected: dict[str, tuple], found: dict[str, tuple]) -> None:
    """Raise ArchError describing the first name/shape mismatch, if any."""
    for name in expected:
        if name not in found:
            raise ArchError(f"parameter {name} {expected[name]} missing from checkpoint")
        if tuple(found[name]) != tuple(expected[name]):
            raise ArchError(f"parameter {name}: model shape {expected[name]} vs checkpoint shape {tuple(found[name])}")
    for name in found:
        if name not in expected:
            raise ArchError(f"unexpected parameter {name} {tuple(found[name])} in checkpoint")


# -------------------------------------------------------------- checkpoints


def save_checkpoint(path, model: Model, optimizer_state: dict | None = None, extra: dict | None = None) -> None:
    """Write the HOLONET1 checkpoint.

    Layout: magic, u32 schema version, u32 header length, UTF-8 JSON header,
    then every tensor as little-endian float32 in header order.
    """
    tensors = [(name, p.data) for name, p in model.params.items()]
    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {"t": int(optimizer_state["t"])}
        for slot in ("m", "v"):
            tensors += [(f"adam.{slot}/{name}", arr) for name, arr in optimizer_state[slot].items()]
    header = {
        "arch": model.arch.to_dict(),
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
        "optimizer": opt_meta,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in tensors)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(CKPT_MAGIC + struct.pack("<II", CKPT_SCHEMA, len(head)) + head + body)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != CKPT_MAGIC:
        raise ArchError(f"{path}: not a HOLONET1 checkpoint")
    schema, n = struct.unpack_from("<II", blob, 8)
    if schema != CKPT_SCHEMA:
        raise ArchError(f"{path}: unsupported checkpoint schema {schema}")
    header = json.loads(blob[16:16 + n])
    offset = 16 + n
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(blob, "<f4", count, offset).reshape(shape).astype(np.float32)
        offset += 4 * count
    return header, tensors


def load_checkpoint(path) -> tuple[Model, dict | None]:
    """Rebuild the model from a checkpoint; returns (model, optimizer state or None)."""
    header, tensors = read_checkpoint(path)
    model = build_model(ArchConfig(**header["arch"]))
    model.load_state({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    opt = None
    if header.get("optimizer"):
        opt = {"t": header["optimizer"]["t"], "m": {}, "v": {}}
        for k, v in tensors.items():
            if k.startswith("adam."):
                slot, name = k[len("adam."):].split("/", 1)
                opt[slot][name] = v
    return model, opt
