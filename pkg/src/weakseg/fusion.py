"""Micro Branch (per-pixel darkness) and fusion with the Macro output."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import as_gray, check_same_shape

MODES = ("minmax", "percentile-clip", "global")


@dataclass(frozen=True)
class DarknessConfig:
    normalization: str = "percentile-clip"
    clip_low: float = 1.0
    clip_high: float = 99.0

    def __post_init__(self):
        if self.normalization not in MODES:
            raise ValueError(f"normalization must be one of {MODES}")
        if not 0 <= self.clip_low < self.clip_high <= 100:
            raise ValueError("need 0 <= clip_low < clip_high <= 100")


def darkness_map(image, cfg: DarknessConfig = DarknessConfig()) -> np.ndarray:
    """``1 - normalize(I)``, clamped to [0, 1].

    ``global`` uses the raw brightness (already in [0, 1]); ``minmax`` and
    ``percentile-clip`` stretch the per-image range. A flat image has no
    range to stretch and maps to 0.5 everywhere.
    """
    img = as_gray(image)
    if cfg.normalization == "global":
        return 1.0 - img
    if cfg.normalization == "minmax":
        lo, hi = float(img.min()), float(img.max())
    else:
        lo, hi = np.percentile(img, [cfg.clip_low, cfg.clip_high])
    if hi <= lo:
        return np.full_like(img, 0.5)
    return 1.0 - np.clip((img - lo) / (hi - lo), 0.0, 1.0)


def fuse(macro, micro) -> np.ndarray:
    macro = np.asarray(macro, dtype=np.float64)
    micro = np.asarray(micro, dtype=np.float64)
    check_same_shape(macro, micro)
    return macro * micro


def binarize(prob, t: float) -> np.ndarray:
    if not 0 <= t <= 1:
        raise ValueError("threshold must be in [0, 1]")
    return (np.asarray(prob) > t).astype(np.uint8)
