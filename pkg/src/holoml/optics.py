"""Inline hologram synthesis and angular-spectrum free-space propagation.

Fields are plain complex numpy arrays of shape ``(ny, nx)``; holograms are
real nonnegative arrays of the same shape. All functions are pure.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np


class OpticsError(ValueError):
    pass


@dataclass(frozen=True)
class OpticsConfig:
    wavelength: float = 632e-9
    pixel_pitch: float = 10e-6
    nx: int = 128
    ny: int = 128
    z_min: float = 1.0e-3
    z_count: int = 128
    z_step: float = 10e-6
    pad: bool = False
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.wavelength > 0:
            raise OpticsError(f"wavelength must be > 0, got {self.wavelength}")
        if not self.pixel_pitch > 0:
            raise OpticsError(f"pixel_pitch must be > 0, got {self.pixel_pitch}")
        if not self.z_step > 0:
            raise OpticsError(f"z_step must be > 0, got {self.z_step}")
        if self.nx < 8 or self.ny < 8:
            raise OpticsError(f"grid must be at least 8x8, got {self.ny}x{self.nx}")
        if self.z_count < 2:
            raise OpticsError(f"z_count must be >= 2, got {self.z_count}")
        if self.noise_sigma < 0:
            raise OpticsError("noise_sigma must be >= 0")

    @property
    def z_max(self) -> float:
        return self.z_min + (self.z_count - 1) * self.z_step

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def depth(self, z_index: int) -> float:
        """Distance (m) from slice ``z_index`` to the sensor."""
        return self.z_min + z_index * self.z_step

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Particle:
    x: float
    y: float
    z_index: int
    diameter: float = 1.0


ParticleField = list  # list[Particle]


def asm_transfer(config: OpticsConfig, dz: float, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Angular-spectrum transfer function on the unshifted FFT frequency grid.

    Evanescent components (``lambda * |f| > 1``) are set to exactly zero.
    """
    ny, nx = shape if shape is not None else config.shape
    fx = np.fft.fftfreq(nx, d=config.pixel_pitch)
    fy = np.fft.fftfreq(ny, d=config.pixel_pitch)
    f2 = fy[:, None] ** 2 + fx[None, :] ** 2
    arg = 1.0 / config.wavelength**2 - f2
    propagating = arg >= 0
    kz = np.sqrt(np.where(propagating, arg, 0.0))
    h = np.exp(1j * 2 * np.pi * dz * kz)
    h[~propagating] = 0.0
    return h


def propagate(field: np.ndarray, dz: float, config: OpticsConfig) -> np.ndarray:
    """Propagate a complex field by ``dz`` metres (negative for back-propagation).

    Periodic boundaries unless ``config.pad`` is set, in which case the field
    is zero-padded to twice its size and cropped back afterwards.
    """
    field = np.asarray(field)
    if field.shape != config.shape:
        raise OpticsError(f"field shape {field.shape} does not match config {config.shape}")
    if not config.pad:
        return np.fft.ifft2(np.fft.fft2(field) * asm_transfer(config, dz))
    ny, nx = config.shape
    padded = np.zeros((2 * ny, 2 * nx), dtype=complex)
    oy, ox = ny // 2, nx // 2
    padded[oy:oy + ny, ox:ox + nx] = field
    out = np.fft.ifft2(np.fft.fft2(padded) * asm_transfer(config, dz, (2 * ny, 2 * nx)))
    return out[oy:oy + ny, ox:ox + nx]


def check_particles(particles: Iterable[Particle], config: OpticsConfig) -> None:
    for i, p in enumerate(particles):
        if not (0 <= p.x < config.nx and 0 <= p.y < config.ny):
            raise OpticsError(f"particle {i} lateral position ({p.x}, {p.y}) outside the {config.nx}x{config.ny} grid")
        if not (0 <= p.z_index < config.z_count) or int(p.z_index) != p.z_index:
            raise OpticsError(f"particle {i} z_index {p.z_index} outside [0, {config.z_count - 1}]")
        if p.diameter < 0:
            raise OpticsError(f"particle {i} has negative diameter {p.diameter}")


def rasterize(particle: Particle, config: OpticsConfig) -> np.ndarray:
    """Opaque-disk aperture for one particle: 1 inside the disk, 0 elsewhere."""
    aperture = np.zeros(config.shape)
    cx, cy = int(round(particle.x)), int(round(particle.y))
    if particle.diameter <= 1:
        aperture[cy, cx] = 1.0
        return aperture
    r = particle.diameter / 2
    yy, xx = np.ogrid[: config.ny, : config.nx]
    aperture[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = 1.0
    return aperture


def scattered_field(particles: Sequence[Particle], config: OpticsConfig) -> np.ndarray:
    """Sum of the particles' aperture fields propagated to the sensor plane.

    Amplitudes are expressed relative to the plane reference wave, which
    travels the same distance: each slice's field is divided by the carrier
    ``exp(i 2 pi dz / wavelength)``. Without this the in-focus reconstruction
    ``exp(-i k dz) - a`` would not vanish and its brightness would depend on
    ``k dz mod 2 pi``.

    Apertures sharing a depth slice are summed before propagating; the
    amplitude model is linear so this is exact.
    """
    check_particles(particles, config)
    by_depth: dict[int, np.ndarray] = defaultdict(lambda: np.zeros(config.shape))
    for p in particles:
        by_depth[int(p.z_index)] += rasterize(p, config)
    total = np.zeros(config.shape, dtype=complex)
    for z_index in sorted(by_depth):
        dz = config.depth(z_index)
        carrier = np.exp(-2j * np.pi * dz / config.wavelength)
        total += propagate(by_depth[z_index], dz, config) * carrier
    return total


def synthesize_hologram(
    particles: Sequence[Particle],
    config: OpticsConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Inline hologram ``|1 - sum_k ASM(a_k, z_k)|^2`` of a particle field,
    scattered amplitudes taken relative to the reference carrier.

    Additive Gaussian sensor noise of ``config.noise_sigma`` is applied when
    nonzero (requires ``rng``); the result is clipped at zero.
    """
    holo = np.abs(1.0 - scattered_field(particles, config)) ** 2
    if config.noise_sigma > 0:
        if rng is None:
            raise OpticsError("noise_sigma > 0 requires an rng")
        holo = np.clip(holo + rng.normal(0.0, config.noise_sigma, holo.shape), 0.0, None)
    return holo
