"""Slice preparation for SAM-style models.

The client sends one float32 grayscale slice per request; SAM-family
models want a square uint8 RGB canvas (1024 by default) and an XYXY
pixel box on that canvas. The float slice is resized first and
quantized after, so interpolation runs at full precision.

Intensity handling differs per variant:

- "sam": per-slice min-max stretch to [0, 255]. The natural-image
  checkpoints were trained on full-range uint8 inputs.
- "medsam": values are taken as already windowed to [0, 1] (the
  client's normalization) and mapped by a plain multiply, clipping
  anything outside. MedSAM's published preprocessing rescales windowed
  CT slices the same way.
"""

from __future__ import annotations

import numpy as np

__all__ = ["resize_bilinear", "to_rgb8", "scale_box"]


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered sampling."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D slice, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    yf = np.floor(ys)
    xf = np.floor(xs)
    wy = (ys - yf)[:, None].astype(np.float32)
    wx = (xs - xf)[None, :].astype(np.float32)
    y0 = np.clip(yf.astype(np.int64), 0, h - 1)
    y1 = np.clip(yf.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(xf.astype(np.int64), 0, w - 1)
    x1 = np.clip(xf.astype(np.int64) + 1, 0, w - 1)
    top = img[y0][:, x0] * (1.0 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1.0 - wx) + img[y1][:, x1] * wx
    return (top * (1.0 - wy) + bot * wy).astype(np.float32)


def to_rgb8(sl, variant: str) -> np.ndarray:
    """Quantize a float slice to a (h, w, 3) uint8 canvas."""
    sl = np.asarray(sl, dtype=np.float32)
    if variant == "medsam":
        scaled = np.clip(sl, 0.0, 1.0) * 255.0
    elif variant == "sam":
        lo = float(sl.min())
        hi = float(sl.max())
        if hi > lo:
            scaled = (sl - lo) * (255.0 / (hi - lo))
        else:
            scaled = np.zeros_like(sl)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    u8 = np.round(scaled).astype(np.uint8)
    return np.repeat(u8[:, :, None], 3, axis=2)


def scale_box(box, h: int, w: int, out_h: int, out_w: int) -> tuple:
    """Map an inclusive (y0, x0, y1, x1) box to XYXY on a resized canvas.

    The upper coordinates are treated as exclusive pixel edges
    (x1 + 1, y1 + 1) before scaling, so a box covering the whole slice
    maps to the whole canvas.
    """
    y0, x0, y1, x1 = box
    if not (0 <= y0 <= y1 < h and 0 <= x0 <= x1 < w):
        raise ValueError(f"box {box} outside slice {h}x{w}")
    sy = out_h / h
    sx = out_w / w
    return (x0 * sx, y0 * sy, (x1 + 1) * sx, (y1 + 1) * sy)
