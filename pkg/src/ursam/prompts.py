"""Bounding-box prompts: extraction, perturbation, augmentation.

Boxes use inclusive voxel coordinates ``(z0, y0, x0, z1, y1, x1)``.
Augmentation and the simulated manual prompt only ever move the
in-plane corners; the z extent is left alone, since prompts are
consumed slice-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .seeds import derive_rng

__all__ = [
    "BoundingBox",
    "PromptAugConfig",
    "bbox_from_mask",
    "extend_box",
    "simulate_manual_prompt",
    "augment_prompts",
    "relative_offset",
    "shift_bound",
]


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive 3D box. ``plane`` gives the 2D prompt (y0, x0, y1, x1)."""

    z0: int
    y0: int
    x0: int
    z1: int
    y1: int
    x1: int

    def __post_init__(self):
        for name in ("z0", "y0", "x0", "z1", "y1", "x1"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {type(v).__name__}")
            object.__setattr__(self, name, int(v))
        if self.z1 < self.z0 or self.y1 < self.y0 or self.x1 < self.x0:
            raise ValueError(f"inverted box {self.as_tuple()}")
        if min(self.z0, self.y0, self.x0) < 0:
            raise ValueError(f"negative box coordinate in {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int, int, int]:
        return (self.z0, self.y0, self.x0, self.z1, self.y1, self.x1)

    @classmethod
    def from_tuple(cls, t) -> "BoundingBox":
        return cls(*(int(v) for v in t))

    @property
    def plane(self) -> tuple[int, int, int, int]:
        return (self.y0, self.x0, self.y1, self.x1)

    def area2d(self) -> int:
        return (self.y1 - self.y0 + 1) * (self.x1 - self.x0 + 1)

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.z0 <= other.z0
            and self.y0 <= other.y0
            and self.x0 <= other.x0
            and self.z1 >= other.z1
            and self.y1 >= other.y1
            and self.x1 >= other.x1
        )


@dataclass(frozen=True)
class PromptAugConfig:
    """Augmentation settings.

    ``ratio`` scales with the image side: a corner may move by at most
    ``shift_bound(ratio, side)`` pixels along that axis. ``mode``
    is ``"corner"`` (each in-plane corner coordinate drawn
    independently) or ``"translate"`` (one in-plane offset applied to
    both corners, preserving box size).
    """

    n: int
    ratio: float
    seed: int = 0
    mode: str = "corner"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (0 <= self.ratio < 1):
            raise ValueError(f"ratio must be in [0, 1), got {self.ratio}")
        if self.mode not in ("corner", "translate"):
            raise ValueError(f"unknown augmentation mode {self.mode!r}")


def shift_bound(ratio: float, side: int) -> int:
    """Pixel bound for a perturbation ratio on an image side.

    Round-half-up rather than floor: at small grid sizes a flooring
    bound collapses sub-pixel ratios to zero, which silently disables
    augmentation (ratio 0.01 on a 64-wide image must still move
    corners by one pixel; on a 1024-wide image it stays 10).
    """
    return int(math.floor(ratio * side + 0.5))


def _order(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


def _clamp_plane(y0, x0, y1, x1, dims) -> tuple[int, int, int, int]:
    _, h, w = dims
    y0 = min(max(y0, 0), h - 1)
    y1 = min(max(y1, 0), h - 1)
    x0 = min(max(x0, 0), w - 1)
    x1 = min(max(x1, 0), w - 1)
    return y0, x0, y1, x1


def bbox_from_mask(mask, extension=(0, 0, 0)) -> BoundingBox:
    """Tight box around mask foreground, expanded by ``extension``.

    ``extension`` is ``(ez, ey, ex)`` pixels added on both sides per
    axis; the result is clamped to the mask bounds. Raises
    ``ValueError`` on an empty mask.
    """
    arr = np.asarray(getattr(mask, "data", mask))
    if arr.ndim != 3:
        raise ValueError(f"mask must be 3D, got shape {arr.shape}")
    zs, ys, xs = np.nonzero(arr)
    if zs.size == 0:
        raise ValueError("cannot derive a box from an empty mask")
    ez, ey, ex = (int(e) for e in extension)
    if min(ez, ey, ex) < 0:
        raise ValueError(f"extension must be non-negative, got {extension}")
    d, h, w = arr.shape
    return BoundingBox(
        max(int(zs.min()) - ez, 0),
        max(int(ys.min()) - ey, 0),
        max(int(xs.min()) - ex, 0),
        min(int(zs.max()) + ez, d - 1),
        min(int(ys.max()) + ey, h - 1),
        min(int(xs.max()) + ex, w - 1),
    )


def extend_box(box: BoundingBox, extension, dims) -> BoundingBox:
    """Expand a box by ``(ez, ey, ex)`` per side, clamped to ``dims``."""
    ez, ey, ex = (int(e) for e in extension)
    if min(ez, ey, ex) < 0:
        raise ValueError(f"extension must be non-negative, got {extension}")
    d, h, w = dims
    return BoundingBox(
        max(box.z0 - ez, 0),
        max(box.y0 - ey, 0),
        max(box.x0 - ex, 0),
        min(box.z1 + ez, d - 1),
        min(box.y1 + ey, h - 1),
        min(box.x1 + ex, w - 1),
    )


def simulate_manual_prompt(
    box: BoundingBox, max_shift: int, seed: int, dims
) -> BoundingBox:
    """Jitter a box the way a hand-drawn prompt would land.

    Each in-plane corner coordinate moves by an independent uniform
    integer in [-max_shift, +max_shift]; inverted extents are
    re-ordered and the result is clamped to ``dims``. Deterministic
    for a fixed seed.
    """
    if max_shift < 0:
        raise ValueError(f"max_shift must be non-negative, got {max_shift}")
    rng = derive_rng(seed, "manual", box.as_tuple())
    dy0, dx0, dy1, dx1 = (int(v) for v in rng.integers(-max_shift, max_shift + 1, 4))
    y0, y1 = _order(box.y0 + dy0, box.y1 + dy1)
    x0, x1 = _order(box.x0 + dx0, box.x1 + dx1)
    y0, x0, y1, x1 = _clamp_plane(y0, x0, y1, x1, dims)
    return BoundingBox(box.z0, y0, x0, box.z1, y1, x1)


def augment_prompts(box: BoundingBox, cfg: PromptAugConfig, dims) -> list[BoundingBox]:
    """Generate ``cfg.n`` perturbed copies of ``box``.

    Per-axis bounds come from :func:`shift_bound` with the image side
    length (``dims`` is the owning volume's ``(d, h, w)``). Draws are
    keyed by ``(cfg.seed, box, index)``, so each copy has its own
    stream regardless of evaluation order. Ratio 0 returns ``n``
    identical copies.
    """
    _, h, w = dims
    by = shift_bound(cfg.ratio, h)
    bx = shift_bound(cfg.ratio, w)
    out = []
    for i in range(cfg.n):
        rng = derive_rng(cfg.seed, "augment", box.as_tuple(), i)
        if cfg.mode == "corner":
            dy0, dy1 = (int(v) for v in rng.integers(-by, by + 1, 2))
            dx0, dx1 = (int(v) for v in rng.integers(-bx, bx + 1, 2))
        else:
            dy = int(rng.integers(-by, by + 1))
            dx = int(rng.integers(-bx, bx + 1))
            dy0 = dy1 = dy
            dx0 = dx1 = dx
        y0, y1 = _order(box.y0 + dy0, box.y1 + dy1)
        x0, x1 = _order(box.x0 + dx0, box.x1 + dx1)
        y0, x0, y1, x1 = _clamp_plane(y0, x0, y1, x1, dims)
        out.append(BoundingBox(box.z0, y0, x0, box.z1, y1, x1))
    return out


def relative_offset(p_s, p_q, r: float) -> np.ndarray:
    """Saturating relative offset ``r * tanh(p_s - p_q)``.

    Encodes the displacement of a support point ``p_s`` from a query
    point ``p_q`` on a scale that saturates at radius ``r``: every
    component of the result is strictly inside ``(-r, r)`` and the map
    is odd in its arguments.
    """
    r = float(r)
    if not (np.isfinite(r) and r > 0):
        raise ValueError(f"radius must be positive and finite, got {r}")
    ps = np.asarray(p_s, dtype=np.float64)
    pq = np.asarray(p_q, dtype=np.float64)
    if ps.shape != pq.shape:
        raise ValueError(f"point shape mismatch: {ps.shape} vs {pq.shape}")
    out = r * np.tanh(ps - pq)
    # tanh saturates to exactly 1.0 in floating point for large inputs;
    # pull those back inside the open interval.
    limit = np.nextafter(r, 0.0)
    return np.clip(out, -limit, limit)
