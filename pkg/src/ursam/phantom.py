"""Synthetic CT-like phantom volumes with ellipsoidal organs.

Each case is a textured background with a handful of bright ellipsoids
placed on a jittered grid, one binary ground-truth mask per organ.
Intensities are raw (CT-number-like); the pipeline applies its own
window normalization. Generation is fully determined by (spec, seed).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .seeds import derive_rng
from .volume import BinaryMask, Volume, write_uvol

__all__ = ["PhantomSpec", "build_case", "gen_phantom", "organ_name", "case_name"]


@dataclass(frozen=True)
class PhantomSpec:
    cases: int = 10
    organs: int = 4
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    organ_intensity: tuple[float, float] = (250.0, 450.0)
    background_mean: float = -350.0
    texture_amp: float = 60.0
    noise_sigma: float = 25.0
    semiaxes_z: tuple[int, int] = (7, 13)
    semiaxes_yx: tuple[int, int] = (5, 9)

    def __post_init__(self):
        if self.cases < 1 or self.organs < 1:
            raise ValueError("need at least one case and one organ")
        if any(d < 16 for d in self.dims):
            raise ValueError(f"dims too small for organ placement: {self.dims}")
        if self.organs > 4:
            raise ValueError("placement grid supports at most 4 organs per case")


def organ_name(i: int) -> str:
    return f"organ_{i:02d}"


def case_name(i: int) -> str:
    return f"case_{i:03d}"


# In-plane quadrant anchors, as fractions of (h, w).
_ANCHORS = ((0.27, 0.27), (0.27, 0.73), (0.73, 0.27), (0.73, 0.73))


def build_case(spec: PhantomSpec, seed: int, case_idx: int):
    """One phantom: returns (Volume, {organ name: BinaryMask})."""
    d, h, w = spec.dims
    rng = derive_rng(seed, "phantom", case_idx)

    texture = gaussian_filter(rng.standard_normal(spec.dims), 4.0)
    peak = float(np.abs(texture).max())
    if peak > 0:
        texture /= peak
    image = spec.background_mean + spec.texture_amp * texture
    image += spec.noise_sigma * rng.standard_normal(spec.dims)

    zz, yy, xx = np.ogrid[0:d, 0:h, 0:w]
    masks: dict[str, BinaryMask] = {}
    lo_i, hi_i = spec.organ_intensity
    for i in range(spec.organs):
        orng = derive_rng(seed, "phantom", case_idx, "organ", i)
        az = int(orng.integers(spec.semiaxes_z[0], spec.semiaxes_z[1] + 1))
        ay = int(orng.integers(spec.semiaxes_yx[0], spec.semiaxes_yx[1] + 1))
        ax = int(orng.integers(spec.semiaxes_yx[0], spec.semiaxes_yx[1] + 1))
        fy, fx = _ANCHORS[i]
        cy = int(round(fy * (h - 1))) + int(orng.integers(-2, 3))
        cx = int(round(fx * (w - 1))) + int(orng.integers(-2, 3))
        cz = d // 2 + int(orng.integers(-3, 4))
        # Keep the ellipsoid strictly inside the volume.
        cz = min(max(cz, az + 1), d - az - 2)
        cy = min(max(cy, ay + 1), h - ay - 2)
        cx = min(max(cx, ax + 1), w - ax - 2)
        ellipsoid = (
            ((zz - cz) / az) ** 2 + ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2
        ) <= 1.0
        level = float(orng.uniform(lo_i, hi_i))
        count = int(np.count_nonzero(ellipsoid))
        image[ellipsoid] = level + spec.noise_sigma * orng.standard_normal(count)
        masks[organ_name(i)] = BinaryMask(ellipsoid.astype(np.uint8), spec.spacing)

    return Volume(image.astype(np.float32), spec.spacing), masks


def gen_phantom(spec: PhantomSpec, seed: int, out_dir) -> list[str]:
    """Write the dataset to disk; returns the list of case directories.

    Layout: ``<out_dir>/case_XXX/image.uvol`` plus one
    ``gt/<organ>.uvol`` mask per organ.
    """
    out_dir = os.fspath(out_dir)
    written = []
    for c in range(spec.cases):
        volume, masks = build_case(spec, seed, c)
        case_dir = os.path.join(out_dir, case_name(c))
        gt_dir = os.path.join(case_dir, "gt")
        os.makedirs(gt_dir, exist_ok=True)
        write_uvol(volume, os.path.join(case_dir, "image.uvol"))
        for organ, mask in masks.items():
            write_uvol(mask, os.path.join(gt_dir, f"{organ}.uvol"))
        written.append(case_dir)
    return written
