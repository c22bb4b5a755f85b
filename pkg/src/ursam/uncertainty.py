"""Ensemble aggregation and entropy-based uncertainty estimation.

The functions here are shape-agnostic: they accept 2D slices or 3D
volumes, as plain arrays or as the typed grids from
:mod:`ursam.volume` (anything with a ``.data`` attribute).

Given n segmentations of the same image prompted with perturbed boxes,
the per-voxel foreground fraction of the ensemble acts as a
probability; its binary entropy (natural log, so values lie in
[0, ln 2]) marks voxels the prompts disagree on. A class-specific
threshold splits the map into trusted and uncertain regions:

    T = min(u) + ((S_y + S_b) / (2 * S_b)) * (max(u) - min(u))

where S_y is the segmentation foreground area and S_b the prompt box
area of the slice under consideration. Small objects in a large box
push T down (more voxels flagged), objects filling their box push it
up to the maximum (nothing flagged).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .volume import BinaryMask, ProbMap, UncertaintyMap

__all__ = [
    "ensemble",
    "binarize",
    "entropy_map",
    "class_threshold",
    "uncertainty_mask",
    "SliceStats",
    "EnsembleResult",
]


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x))


def ensemble(preds) -> np.ndarray:
    """Mean of n prediction maps of identical shape, clipped to [0, 1]."""
    maps = [_arr(p) for p in preds]
    if not maps:
        raise ValueError("ensemble needs at least one prediction")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ValueError(f"prediction shape mismatch: {m.shape} vs {shape}")
    mean = np.mean(np.stack(maps, axis=0), axis=0, dtype=np.float64)
    return np.clip(mean, 0.0, 1.0).astype(np.float32)


def binarize(prob, tau: float = 0.5) -> np.ndarray:
    """Threshold a probability map; p >= tau maps to foreground."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    return (_arr(prob) >= tau).astype(np.uint8)


def entropy_map(prob) -> np.ndarray:
    """Per-voxel binary predictive entropy, natural log.

    u = -p*ln(p) - (1-p)*ln(1-p), with 0*ln(0) = 0, so u(0) = u(1) = 0
    and the maximum ln 2 is reached at p = 0.5.
    """
    p = _arr(prob).astype(np.float64)
    if (p < 0).any() or (p > 1).any():
        raise ValueError("probabilities must lie in [0, 1]")
    u = -xlogy(p, p) - xlogy(1.0 - p, 1.0 - p)
    return np.maximum(u, 0.0).astype(np.float32)


def class_threshold(u_values, s_y: int, s_b: int) -> float:
    """Class-specific uncertainty threshold over a slice region.

    Interpolates between min and max of ``u_values`` at the fraction
    (s_y + s_b) / (2 * s_b), then clamps back into [min, max] (the
    fraction exceeds 1 whenever the segmentation outgrows its box).
    """
    u = _arr(u_values).astype(np.float64)
    if u.size == 0:
        raise ValueError("cannot derive a threshold from an empty region")
    s_y = int(s_y)
    s_b = int(s_b)
    if s_b <= 0:
        raise ValueError(f"box area must be positive, got {s_b}")
    if s_y < 0:
        raise ValueError(f"foreground area must be non-negative, got {s_y}")
    lo = float(u.min())
    hi = float(u.max())
    t = lo + ((s_y + s_b) / (2.0 * s_b)) * (hi - lo)
    return min(max(t, lo), hi)


def uncertainty_mask(u, threshold: float) -> np.ndarray:
    """Voxels strictly above the threshold (uint8)."""
    return (_arr(u) > float(threshold)).astype(np.uint8)


@dataclass(frozen=True)
class SliceStats:
    """Per-slice threshold bookkeeping, kept for reports and audits."""

    z: int
    box: tuple[int, int, int, int]  # (y0, x0, y1, x1) inclusive
    s_y: int
    s_b: int
    t_unc: float


@dataclass(frozen=True)
class EnsembleResult:
    """Aggregated per-organ ensemble output at volume level."""

    prob: ProbMap
    mask: BinaryMask
    unc: UncertaintyMap
    unc_mask: BinaryMask
    slice_stats: tuple[SliceStats, ...]
