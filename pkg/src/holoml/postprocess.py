"""Particle extraction from network output, pairing, metrics and a classical baseline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .dataset import depth_index, window_mean
from .optics import OpticsConfig, Particle
from .preprocess import reconstruct_volume

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def extract_particles(output: np.ndarray, config: OpticsConfig, threshold: float = 0.5) -> list[Particle]:
    """Binarize the centroid channel, label 8-connected components and read depths.

    Centroids are intensity-weighted; depth comes from the 3x3 mean of the
    depth channel at the rounded centroid.
    """
    output = np.asarray(output, dtype=float)
    depth, centroid = output[0], output[1]
    mask = centroid > threshold
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    centers = ndimage.center_of_mass(centroid, labels, range(1, n + 1))
    out = []
    for cy, cx in centers:
        v = window_mean(depth, int(round(cx)), int(round(cy)))
        z = min(max(depth_index(v, config.z_count), 0), config.z_count - 1)
        out.append(Particle(float(cx), float(cy), z, 1.0))
    return out


@dataclass
class Tolerance:
    lateral: float = 4.0
    axial: float = 16.0

    def __post_init__(self):
        if not (self.lateral > 0 and self.axial > 0):
            raise ValueError("pairing tolerances must be positive")


@dataclass
class Matching:
    pairs: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    unmatched_pred: list[int] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)
    tolerance: Tolerance = field(default_factory=Tolerance)

    def total_distance(self) -> float:
        t = self.tolerance
        return sum(math.sqrt((dx / t.lateral) ** 2 + (dy / t.lateral) ** 2 + (dz / t.axial) ** 2)
                   for _, _, dx, dy, dz in self.pairs)


def candidate_pairs(pred, gt, tol: Tolerance) -> list[tuple[float, int, int]]:
    """All (normalized distance, pred index, gt index) within tolerance."""
    if not pred or not gt:
        return []
    p = np.array([[q.x, q.y, q.z_index] for q in pred], dtype=float)
    g = np.array([[q.x, q.y, q.z_index] for q in gt], dtype=float)
    d = p[:, None, :] - g[None, :, :]
    lateral = np.hypot(d[..., 0], d[..., 1])
    ok = (lateral <= tol.lateral) & (np.abs(d[..., 2]) <= tol.axial)
    norm = np.sqrt((lateral / tol.lateral) ** 2 + (d[..., 2] / tol.axial) ** 2)
    i, j = np.nonzero(ok)
    return sorted(zip(norm[i, j].tolist(), i.tolist(), j.tolist()))


def pair_particles(pred, gt, tol: Tolerance | None = None) -> Matching:
    """Greedy one-to-one pairing in order of increasing normalized distance."""
    tol = tol or Tolerance()
    used_p, used_g, pairs = set(), set(), []
    for _, i, j in candidate_pairs(pred, gt, tol):
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, pred[i].x - gt[j].x, pred[i].y - gt[j].y, float(pred[i].z_index - gt[j].z_index)))
    return Matching(
        pairs=pairs,
        unmatched_pred=[i for i in range(len(pred)) if i not in used_p],
        unmatched_gt=[j for j in range(len(gt)) if j not in used_g],
        tolerance=tol,
    )


@dataclass
class Metrics:
    extraction: float | None
    ghost: float
    med_dx: float
    med_dy: float
    med_dz: float
    n_gt: int
    n_pred: int
    n_paired: int

    def to_dict(self) -> dict:
        return asdict(self)


def _median_abs(values) -> float:
    return float(np.median(np.abs(values))) if len(values) else 0.0


def compute_metrics(matching: Matching, pred, gt) -> Metrics:
    """Extraction = paired / ground truth (None without ground truth); ghost = unpaired / predictions."""
    n_pair, n_pred, n_gt = len(matching.pairs), len(pred), len(gt)
    cols = list(zip(*[p[2:] for p in matching.pairs])) or [(), (), ()]
    return Metrics(
        extraction=n_pair / n_gt if n_gt else None,
        ghost=(n_pred - n_pair) / n_pred if n_pred else 0.0,
        med_dx=_median_abs(cols[0]),
        med_dy=_median_abs(cols[1]),
        med_dz=_median_abs(cols[2]),
        n_gt=n_gt,
        n_pred=n_pred,
        n_paired=n_pair,
    )


def focus_map(holo: np.ndarray, config: OpticsConfig, mode: str = "raw") -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel minimum reconstructed intensity over depth and its slice index.

    Intensities are normalized by the squared mean hologram level so the
    undisturbed background sits at 1.
    """
    volume = reconstruct_volume(holo, config, mode)
    intensity = (volume * np.conj(volume)).real
    level = float(np.mean(holo)) ** 2 if mode == "raw" else 1.0
    if level <= 0:
        return np.ones(config.shape), np.zeros(config.shape, dtype=int)
    return intensity.min(axis=0) / level, intensity.argmin(axis=0)


def segment_focus(focus: np.ndarray, zmin: np.ndarray, config: OpticsConfig, intensity_threshold: float) -> list[Particle]:
    """Group pixels with ``focus < intensity_threshold`` into 26-connected (z, y, x) components."""
    if not 0 < intensity_threshold < 1:
        raise ValueError("intensity_threshold must lie in (0, 1)")
    ys, xs = np.nonzero(focus < intensity_threshold)
    if len(ys) == 0:
        return []
    mask = np.zeros((config.z_count, *focus.shape), dtype=bool)
    mask[zmin[ys, xs], ys, xs] = True
    labels, n = ndimage.label(mask, structure=np.ones((3, 3, 3), dtype=bool))
    centers = ndimage.center_of_mass(mask, labels, range(1, n + 1))
    return [
        Particle(float(cx), float(cy), int(min(max(round(cz), 0), config.z_count - 1)), 1.0)
        for cz, cy, cx in centers
    ]


def baseline_segment(
    holo: np.ndarray,
    config: OpticsConfig,
    intensity_threshold: float = 0.3,
    mode: str = "raw",
) -> list[Particle]:
    """Classical minimum-intensity segmentation of the reconstructed volume.

    Pixels whose depth-minimum falls below the threshold are placed at their
    argmin slice and grouped into 26-connected components; each component's
    mean position is one particle.
    """
    if not 0 < intensity_threshold < 1:
        raise ValueError("intensity_threshold must lie in (0, 1)")
    return segment_focus(*focus_map(holo, config, mode), config, intensity_threshold)


def calibrate_baseline(
    holos,
    truths,
    config: OpticsConfig,
    tol: Tolerance = Tolerance(),
    max_ghost: float = 0.2,
    thresholds=None,
    mode: str = "raw",
) -> tuple[float, float, float]:
    """Pick the baseline threshold with the best pooled extraction at ghost <= ``max_ghost``.

    Returns ``(threshold, extraction, ghost)``. If no threshold meets the
    ghost budget, the one with the lowest ghost rate is returned.
    """
    if thresholds is None:
        thresholds = np.round(np.arange(0.05, 0.96, 0.05), 2)
    maps = [focus_map(h, config, mode) for h in holos]
    scored = []
    for t in thresholds:
        n_gt = n_pred = n_pair = 0
        for (focus, zmin), gt in zip(maps, truths):
            pred = segment_focus(focus, zmin, config, float(t))
            n_gt += len(gt)
            n_pred += len(pred)
            n_pair += len(pair_particles(pred, gt, tol).pairs)
        scored.append((float(t), n_pair / max(n_gt, 1), (n_pred - n_pair) / n_pred if n_pred else 0.0))
    ok = [s for s in scored if s[2] <= max_ghost]
    if ok:
        return max(ok, key=lambda s: (s[1], -s[2]))
    return min(scored, key=lambda s: (s[2], -s[1]))
