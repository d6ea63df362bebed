"""Hologram preprocessing into the 3-channel network input.

The hologram is back-propagated through every depth slice with the angular
spectrum method; the per-pixel argmax-intensity slice (depth map) and the
per-pixel maximum phase over depth are stacked with the hologram itself.
The depth map is taken on the scattered part of the volume (the background
level removed), where an opaque particle is brightest at its own depth.
"""

from __future__ import annotations

import numpy as np

from .optics import OpticsConfig, OpticsError, asm_transfer, propagate

SENSOR_MODES = ("raw", "sqrt", "contrast")


def sensor_field(holo: np.ndarray, mode: str = "raw") -> np.ndarray:
    holo = np.asarray(holo, dtype=float)
    if mode == "raw":
        return holo
    if mode == "sqrt":
        return np.sqrt(np.clip(holo, 0.0, None))
    if mode == "contrast":
        return holo - 1.0
    raise ValueError(f"unknown sensor mode {mode!r}; expected one of {SENSOR_MODES}")


def reference_carrier(config: OpticsConfig, j: int) -> complex:
    """Phase factor that removes the plane reference wave's own propagation from slice ``j``."""
    return np.exp(2j * np.pi * config.depth(j) / config.wavelength)


def reconstruct_volume(holo: np.ndarray, config: OpticsConfig, mode: str = "raw") -> np.ndarray:
    """Complex volume of shape ``(z_count, ny, nx)``; slice j sits at ``config.depth(j)``.

    Slice j is the sensor field propagated by ``-depth(j)`` times the
    reference carrier, so the undisturbed background reconstructs to a real
    positive value at every depth and the phase channel is not swamped by
    ``k * depth`` wrapping.
    """
    holo = np.asarray(holo)
    if holo.shape != config.shape:
        raise OpticsError(f"hologram shape {holo.shape} does not match config {config.shape}")
    field = sensor_field(holo, mode)
    volume = np.empty((config.z_count, *config.shape), dtype=complex)
    if config.pad:
        for j in range(config.z_count):
            volume[j] = propagate(field, -config.depth(j), config) * reference_carrier(config, j)
        return volume
    spectrum = np.fft.fft2(field)
    for j in range(config.z_count):
        volume[j] = np.fft.ifft2(spectrum * asm_transfer(config, -config.depth(j))) * reference_carrier(config, j)
    return volume


def depth_map(volume: np.ndarray) -> np.ndarray:
    """Per-pixel slice index of maximum intensity; ties go to the smallest index."""
    volume = np.asarray(volume)
    if volume.ndim != 3 or volume.shape[0] == 0:
        raise ValueError("depth_map needs a nonempty (z, y, x) volume")
    intensity = (volume * np.conj(volume)).real
    return np.argmax(intensity, axis=0)


def phase_map(volume: np.ndarray) -> np.ndarray:
    """Per-pixel maximum over depth of the phase angle, in (-pi, pi]."""
    volume = np.asarray(volume)
    if volume.ndim != 3 or volume.shape[0] == 0:
        raise ValueError("phase_map needs a nonempty (z, y, x) volume")
    phase = np.angle(volume)
    # np.angle returns -pi for negative reals with a -0.0 imaginary part
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return phase.max(axis=0)


def background_level(holo: np.ndarray, mode: str = "raw") -> float:
    """Value every slice of ``reconstruct_volume`` takes where nothing scatters.

    Propagation keeps the zero-frequency term and the reference carrier
    cancels its phase, so this is the sensor field's mean.
    """
    return float(np.mean(sensor_field(holo, mode)))


def minmax(image: np.ndarray) -> np.ndarray:
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        return np.zeros_like(image, dtype=float)
    return (image - lo) / (hi - lo)


def assemble_input(holo: np.ndarray, config: OpticsConfig, mode: str = "raw") -> np.ndarray:
    """Stack ``(3, ny, nx)`` of normalized hologram, depth map and max-phase map."""
    volume = reconstruct_volume(holo, config, mode)
    stack = np.empty((3, *config.shape))
    stack[0] = minmax(np.asarray(holo, dtype=float))
    stack[1] = depth_map(volume - background_level(holo, mode)) / (config.z_count - 1)
    stack[2] = (phase_map(volume) + np.pi) / (2 * np.pi)
    return stack
