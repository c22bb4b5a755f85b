"""Checkpoint loading and single-box inference.

torch and segment_anything are imported lazily so the package can be
installed, and its protocol layer tested, on machines without the
model stack. Install the "model" extra to serve real checkpoints.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .imaging import resize_bilinear, scale_box, to_rgb8

__all__ = ["BridgeConfig", "SamRunner", "VARIANTS"]

VARIANTS = ("sam", "medsam")


@dataclass(frozen=True)
class BridgeConfig:
    checkpoint: str
    variant: str = "sam"
    device: str = "cpu"
    resolution: int = 1024

    def __post_init__(self):
        if not os.path.isfile(self.checkpoint):
            raise ValueError(f"checkpoint not found: {self.checkpoint}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.resolution < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")


class SamRunner:
    """One loaded ViT-B checkpoint serving box-prompted slices.

    Inference is deterministic (eval mode, gradients off, fixed seed),
    single-mask, and returns the sigmoid of the mask logits resized
    back to the request shape.
    """

    def __init__(self, cfg: BridgeConfig):
        import torch
        from segment_anything import SamPredictor, sam_model_registry

        self._torch = torch
        self._cfg = cfg
        torch.manual_seed(0)
        sam = sam_model_registry["vit_b"](checkpoint=cfg.checkpoint)
        sam.to(cfg.device)
        sam.eval()
        self._predictor = SamPredictor(sam)

    def segment(self, sl: np.ndarray, box) -> np.ndarray:
        cfg = self._cfg
        h, w = sl.shape
        r = cfg.resolution
        canvas = to_rgb8(resize_bilinear(sl, r, r), cfg.variant)
        xyxy = np.asarray(scale_box(box, h, w, r, r), dtype=np.float32)
        with self._torch.no_grad():
            self._predictor.set_image(canvas)
            logits, _, _ = self._predictor.predict(
                box=xyxy, multimask_output=False, return_logits=True
            )
        prob = 1.0 / (1.0 + np.exp(-np.asarray(logits[0], dtype=np.float32)))
        out = resize_bilinear(prob, h, w)
        return np.clip(out, 0.0, 1.0).astype(np.float32)
