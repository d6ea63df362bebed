"""Training targets, synthetic dataset generation and the dataset manifest.

Target channel 0 holds a 3x3 blob of value ``(z_index + 1) / z_count`` per
particle (background 0, overlaps take the max); channel 1 holds a single 1 at
each rounded centroid.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import arrayio
from .optics import OpticsConfig, Particle, check_particles, synthesize_hologram
from .preprocess import assemble_input

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"


class TargetError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def depth_value(z_index: int, z_count: int) -> float:
    return (z_index + 1) / z_count


def depth_index(value: float, z_count: int) -> int:
    return int(round(value * z_count)) - 1


def encode_target(particles, config: OpticsConfig) -> np.ndarray:
    """Encode a particle field as a ``(2, ny, nx)`` float32 target stack."""
    check_particles(particles, config)
    target = np.zeros((2, *config.shape), dtype=np.float32)
    for p in particles:
        cx, cy = int(round(p.x)), int(round(p.y))
        target[1, cy, cx] = 1.0
        y0, y1 = max(cy - 1, 0), min(cy + 2, config.ny)
        x0, x1 = max(cx - 1, 0), min(cx + 2, config.nx)
        blob = target[0, y0:y1, x0:x1]
        np.maximum(blob, depth_value(int(p.z_index), config.z_count), out=blob)
    return target


def window_mean(channel: np.ndarray, x: int, y: int) -> float:
    """Mean of the 3x3 window centred at (x, y), clipped at the borders."""
    ny, nx = channel.shape
    return float(channel[max(y - 1, 0):min(y + 2, ny), max(x - 1, 0):min(x + 2, nx)].mean())


def decode_target(target: np.ndarray, config: OpticsConfig) -> list[Particle]:
    target = np.asarray(target)
    if target.shape != (2, *config.shape):
        raise TargetError(f"target shape {target.shape} != (2, {config.ny}, {config.nx})")
    out = []
    for y, x in zip(*np.nonzero(target[1] >= 0.5)):
        v = window_mean(target[0], int(x), int(y))
        if v <= 0:
            raise TargetError(f"depth channel is empty around claimed centroid ({x}, {y})")
        out.append(Particle(float(x), float(y), depth_index(v, config.z_count), 1.0))
    return out


# ----------------------------------------------------------------- generation


@dataclass
class DatasetSpec:
    count: int = 16
    ppp: float | None = None
    particles_per_hologram: int | None = 300
    diameter: float = 1.0
    seed: int = 0
    splits: dict = field(default_factory=lambda: {"train": 0.9, "val": 0.1, "test": 0.0})
    sensor_mode: str = "raw"

    def __post_init__(self):
        if self.count < 0:
            raise DatasetError(f"count must be >= 0, got {self.count}")
        if self.diameter < 0:
            raise DatasetError("diameter must be >= 0")
        unknown = set(self.splits) - {"train", "val", "test"}
        if unknown:
            raise DatasetError(f"unknown split names {sorted(unknown)}")
        if any(v < 0 for v in self.splits.values()) or sum(self.splits.values()) <= 0:
            raise DatasetError("split fractions must be nonnegative with a positive sum")

    def n_particles(self, config: OpticsConfig) -> int:
        if self.ppp is not None:
            n = int(round(self.ppp * config.nx * config.ny))
            if self.ppp * config.nx * config.ny < 1:
                raise DatasetError(f"ppp {self.ppp} gives fewer than one particle on {config.ny}x{config.nx}")
        elif self.particles_per_hologram is not None:
            n = int(self.particles_per_hologram)
        else:
            raise DatasetError("need ppp or particles_per_hologram")
        if not 1 <= n <= config.nx * config.ny:
            raise DatasetError(f"particle count {n} impossible on {config.ny}x{config.nx}")
        return n

    def to_dict(self) -> dict:
        return asdict(self)


def sample_particles(n: int, config: OpticsConfig, rng: np.random.Generator, diameter: float = 1.0) -> list[Particle]:
    """Uniform particles on distinct pixel sites with uniform depth slices."""
    sites = rng.choice(config.nx * config.ny, size=n, replace=False)
    zs = rng.integers(0, config.z_count, size=n)
    return [
        Particle(float(s % config.nx), float(s // config.nx), int(z), float(diameter))
        for s, z in zip(sites, zs)
    ]


def assign_splits(count: int, fractions: dict, seed: int) -> list[str]:
    names = [k for k in ("train", "val", "test") if fractions.get(k, 0) > 0]
    total = sum(fractions[k] for k in names)
    sizes = [int(np.floor(fractions[k] / total * count)) for k in names]
    sizes[0] += count - sum(sizes)
    tags = np.repeat(names, sizes).tolist() if count else []
    order = np.random.default_rng([seed, 1]).permutation(count)
    return [tags[i] for i in order]


def make_sample(config: OpticsConfig, n: int, diameter: float, seed_seq, sensor_mode: str = "raw"):
    rng = np.random.default_rng(seed_seq)
    particles = sample_particles(n, config, rng, diameter)
    holo = synthesize_hologram(particles, config, rng)
    return particles, holo, assemble_input(holo, config, sensor_mode), encode_target(particles, config)


def _write_sample(root: Path, sid: str, config: OpticsConfig, n: int, spec: DatasetSpec, seed_seq) -> dict:
    particles, holo, stack, target = make_sample(config, n, spec.diameter, seed_seq, spec.sensor_mode)
    rec = {
        "id": sid,
        "hologram": f"samples/{sid}_holo.holoarr",
        "input": f"samples/{sid}_input.holoarr",
        "target": f"samples/{sid}_target.holoarr",
        "ground_truth": f"samples/{sid}_gt.csv",
        "n_particles": len(particles),
    }
    arrayio.save_array(root / rec["hologram"], holo)
    arrayio.save_array(root / rec["input"], stack)
    arrayio.save_array(root / rec["target"], target, arrayio.U16, 1.0)
    arrayio.save_particles(root / rec["ground_truth"], particles)
    return rec


def _write_sample_star(args):
    return _write_sample(*args)


def generate_dataset(spec: DatasetSpec, config: OpticsConfig, out_dir, workers: int = 1) -> dict:
    """Synthesize ``spec.count`` samples under ``out_dir`` and write the manifest last."""
    root = Path(out_dir)
    try:
        (root / "samples").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create output directory {root}: {exc}") from None
    if not os.access(root, os.W_OK):
        raise DatasetError(f"output directory {root} is not writable")
    n = spec.n_particles(config) if spec.count else 0
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.count)
    jobs = [(root, f"{i:06d}", config, n, spec, seeds[i]) for i in range(spec.count)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_write_sample_star, jobs))
    else:
        records = [_write_sample_star(j) for j in jobs]
    for rec, tag in zip(records, assign_splits(spec.count, spec.splits, spec.seed)):
        rec["split"] = tag
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": spec.seed,
        "optics": config.to_dict(),
        "dataset": spec.to_dict(),
        "ppp": n / (config.nx * config.ny),
        "samples": records,
    }
    arrayio._atomic_write(root / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True))
    manifest["_root"] = str(root)
    return manifest


# --------------------------------------------------------------------- loading


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(f"{path}: unsupported schema version {manifest.get('schema_version')}")
    manifest["_root"] = str(path.parent)
    return manifest


def optics_from_manifest(manifest: dict) -> OpticsConfig:
    return OpticsConfig(**manifest["optics"])


def load_arrays(manifest: dict, split: str | None = None) -> tuple[list[dict], np.ndarray, np.ndarray]:
    """Load inputs ``(N, 3, ny, nx)`` and targets ``(N, 2, ny, nx)``, checking shapes."""
    root = Path(manifest["_root"])
    config = optics_from_manifest(manifest)
    records = [r for r in manifest["samples"] if split is None or r["split"] == split]
    inputs = np.zeros((len(records), 3, *config.shape), dtype=np.float32)
    targets = np.zeros((len(records), 2, *config.shape), dtype=np.float32)
    for i, rec in enumerate(records):
        for key, dest, shape in (("input", inputs, (3, *config.shape)), ("target", targets, (2, *config.shape))):
            path = root / rec[key]
            if not path.exists():
                raise DatasetError(f"missing file {path}")
            arr = arrayio.load_array(path)
            if arr.shape != shape:
                raise DatasetError(f"{path}: shape {arr.shape} != declared {shape}")
            dest[i] = arr
    return records, inputs, targets


def load_ground_truth(manifest: dict, record: dict) -> list[Particle]:
    return arrayio.load_particles(Path(manifest["_root"]) / record["ground_truth"])


def load_hologram(manifest: dict, record: dict) -> np.ndarray:
    return arrayio.load_array(Path(manifest["_root"]) / record["hologram"]).astype(float)

