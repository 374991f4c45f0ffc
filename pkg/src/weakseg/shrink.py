"""Shrink Module: pull the weak annotation's outline in toward its skeleton.

Every outer-contour pixel walks along a straight line to its nearest
skeleton pixel and stops where the Myopic probability first rises clearly
above its starting value on two consecutive pixels. The stopped points are
joined back into a closed outline and filled, which keeps each crack in one
piece where thresholding the Myopic map alone would break it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import (
    ContourPath,
    as_mask,
    bresenham,
    check_same_shape,
    connected_components,
    fill_closed_path,
    outer_contours,
    skeletonize,
)

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ShrinkConfig:
    delta: float = 0.2
    consecutive_hits: int = 2
    max_steps: int | None = None  # None: the component's diameter
    past_skeleton: bool = True

    def __post_init__(self):
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must be in [0, 1]")
        if self.consecutive_hits != 2:
            raise ValueError("consecutive_hits is fixed at 2")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")


def nearest_skeleton(p, skeleton_points) -> tuple[int, int]:
    """Closest skeleton pixel to ``p``; ties go to the smaller (y, x)."""
    pts = np.asarray(skeleton_points, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("skeleton is empty")
    d2 = (pts[:, 0] - p[0]) ** 2 + (pts[:, 1] - p[1]) ** 2
    best = np.flatnonzero(d2 == d2.min())
    i = best[np.lexsort((pts[best, 0], pts[best, 1]))[0]]
    return int(pts[i, 0]), int(pts[i, 1])


def walk_line(p, s, region=None, max_steps=None) -> list[tuple[int, int]]:
    """Pixels visited walking from ``p`` towards ``s``, ``p`` excluded.

    Without ``region`` the walk ends at ``s``. With it, the walk keeps going
    along the same ray past ``s`` and ends at the last pixel before leaving
    ``region`` (or after ``max_steps`` pixels).
    """
    p, s = tuple(p), tuple(s)
    if region is None or p == s:
        line = bresenham(p, s)[1:]
    else:
        h, w = region.shape
        reach = max_steps if max_steps is not None else h + w
        dx, dy = s[0] - p[0], s[1] - p[1]
        k = reach / max(abs(dx), abs(dy))
        far = (p[0] + int(round(dx * max(k, 1))), p[1] + int(round(dy * max(k, 1))))
        line = []
        for z in bresenham(p, far)[1:]:
            if not (0 <= z[0] < w and 0 <= z[1] < h) or not region[z[1], z[0]]:
                break
            line.append(z)
    if max_steps is not None:
        line = line[:max_steps]
    return line


def walk_and_stop(p, s, M, cfg: ShrinkConfig, region=None) -> tuple[int, int]:
    """Move ``p`` towards ``s`` until two consecutive pixels beat ``M(p) + delta``.

    Returns the first pixel of that pair, or ``p`` when no pair is found.
    """
    M = np.asarray(M)
    ref = M[p[1], p[0]] + cfg.delta
    line = walk_line(p, s, region if cfg.past_skeleton else None, cfg.max_steps)
    prev_hit = None
    for z in line:
        if M[z[1], z[0]] > ref:
            if prev_hit is not None:
                return prev_hit
            prev_hit = z
        else:
            prev_hit = None
    return tuple(p)


def _main_piece(region: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    lab, _ = ndimage.label(region, structure=_EIGHT)
    keep = np.unique(lab[anchor.astype(bool) & (lab > 0)])
    return np.isin(lab, keep[keep > 0]).astype(np.uint8)


def shrink_component(component_mask, M, cfg: ShrinkConfig = ShrinkConfig()) -> np.ndarray:
    comp = as_mask(component_mask)
    M = np.asarray(M, dtype=np.float64)
    check_same_shape(comp, M)
    if comp.sum() < 2:
        return comp.copy()
    skel = skeletonize(comp)
    sy, sx = np.nonzero(skel)
    if len(sx) == 0:
        return comp.copy()
    S = np.stack([sx, sy], axis=1)
    contour = outer_contours(comp)[0]
    refined = [walk_and_stop(p, nearest_skeleton(p, S), M, cfg, comp) for p in contour.points]

    h, w = comp.shape
    chain: list[tuple[int, int]] = []
    for a, b in zip(refined, refined[1:] + refined[:1]):
        seg = bresenham(a, b)
        chain.extend(seg[:-1] if len(refined) > 1 else seg)
    filled = fill_closed_path(ContourPath(tuple(chain or refined)), w, h)
    out = filled & comp
    lab, n = ndimage.label(out, structure=_EIGHT)
    if n == 1:
        return out
    # joining stopped points across a concave bend can leave pieces that
    # only touch outside the component; the skeleton bridges them and any
    # piece it does not reach is dropped
    return _main_piece(out | skel, skel)


def refine_annotation(L, M, cfg: ShrinkConfig = ShrinkConfig()) -> np.ndarray:
    """Shrink every 8-connected component of ``L`` independently."""
    L = as_mask(L)
    M = np.asarray(M, dtype=np.float64)
    check_same_shape(L, M)
    lab = connected_components(L)
    out = np.zeros_like(L)
    for i, sl in enumerate(ndimage.find_objects(lab.labels), start=1):
        # one pixel of margin so the component never touches the crop edge
        y0, y1 = max(sl[0].start - 1, 0), min(sl[0].stop + 1, L.shape[0])
        x0, x1 = max(sl[1].start - 1, 0), min(sl[1].stop + 1, L.shape[1])
        comp = (lab.labels[y0:y1, x0:x1] == i).astype(np.uint8)
        out[y0:y1, x0:x1] |= shrink_component(comp, M[y0:y1, x0:x1], cfg)
    return out
