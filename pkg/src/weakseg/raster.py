"""Raster types and binary-image geometry.

Images are plain 2-D numpy arrays indexed ``[y, x]``:

* gray images and probability maps are ``float64`` in ``[0, 1]``
* binary masks are ``uint8`` holding only 0 and 1

Foreground connectivity is 8-neighbour everywhere; pixels outside the image
count as background.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)

# clockwise on screen (y grows downwards), starting west
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


def as_gray(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


as_prob = as_gray


def as_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("mask values must be 0 or 1")
    return arr.astype(np.uint8)


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"dimension mismatch: {np.shape(a)} vs {np.shape(b)}")


@dataclass(frozen=True)
class ContourPath:
    """Ordered ``(x, y)`` pixel chain; consecutive points are 8-adjacent."""

    points: tuple[tuple[int, int], ...]
    closed: bool = True

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ComponentLabeling:
    labels: np.ndarray
    count: int


def dilate(mask, n: int) -> np.ndarray:
    """``n`` successive dilations with the full 3x3 square."""
    if n < 0:
        raise ValueError("n must be >= 0")
    out = as_mask(mask).copy()
    for _ in range(n):
        p = np.pad(out, 1)
        acc = np.zeros_like(out)
        h, w = out.shape
        for dy in range(3):
            for dx in range(3):
                acc |= p[dy:dy + h, dx:dx + w]
        out = acc
    return out


def connected_components(mask) -> ComponentLabeling:
    labels, count = ndimage.label(as_mask(mask), structure=_EIGHT)
    return ComponentLabeling(labels.astype(np.int64), int(count))


def component_count(mask) -> int:
    return connected_components(mask).count


def _neighbours(p: np.ndarray):
    """P2..P9 (N, NE, E, SE, S, SW, W, NW) views of a 1-padded array."""
    c = p[1:-1, 1:-1]
    h, w = c.shape
    return c, [
        p[0:h, 1:w + 1], p[0:h, 2:w + 2], p[1:h + 1, 2:w + 2], p[2:h + 2, 2:w + 2],
        p[2:h + 2, 1:w + 1], p[2:h + 2, 0:w], p[1:h + 1, 0:w], p[0:h, 0:w],
    ]


def _zs_ok(img: np.ndarray, y: int, x: int, first: bool) -> bool:
    # img is padded by one; (y, x) in padded coordinates
    n = [img[y - 1, x], img[y - 1, x + 1], img[y, x + 1], img[y + 1, x + 1],
         img[y + 1, x], img[y + 1, x - 1], img[y, x - 1], img[y - 1, x - 1]]
    b = sum(n)
    if b < 2 or b > 6:
        return False
    a = sum(1 for i in range(8) if n[i] == 0 and n[(i + 1) % 8] == 1)
    if a != 1:
        return False
    p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
    if first:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


def skeletonize(mask) -> np.ndarray:
    """Zhang-Suen thinning.

    Each sub-iteration flags deletable pixels in parallel, as in the classic
    algorithm, and then removes them in raster order while re-checking the
    deletion test against the partially thinned image. On shapes without
    conflicting deletions this is the textbook result; where the parallel
    rule would erase a 2-pixel-thick structure (2x2 blocks, thick diagonals)
    the re-check keeps a connected remnant instead.
    """
    img = np.pad(as_mask(mask), 1).astype(np.int8)
    changed = True
    while changed:
        changed = False
        for first in (True, False):
            c, nb = _neighbours(img)
            P2, _, P4, _, P6, _, P8, _ = nb
            b = sum(v.astype(np.int16) for v in nb)
            ring = nb + [nb[0]]
            a = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.int16) for i in range(8))
            cand = (c == 1) & (b >= 2) & (b <= 6) & (a == 1)
            if first:
                cand &= (P2 * P4 * P6 == 0) & (P4 * P6 * P8 == 0)
            else:
                cand &= (P2 * P4 * P8 == 0) & (P2 * P6 * P8 == 0)
            ys, xs = np.nonzero(cand)
            for y, x in zip(ys + 1, xs + 1):
                if _zs_ok(img, y, x, first):
                    img[y, x] = 0
                    changed = True
    return img[1:-1, 1:-1].astype(np.uint8)



def _trace(comp: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    h, w = comp.shape

    def fg(x, y):
        return 0 <= x < w and 0 <= y < h and comp[y, x]

    def step(c, back):
        # scan clockwise starting just after the backtrack direction
        for k in range(1, 9):
            d = (back + k) % 8
            nx, ny = c[0] + _MOORE[d][0], c[1] + _MOORE[d][1]
            if fg(nx, ny):
                px = c[0] + _MOORE[(d - 1) % 8][0]
                py = c[1] + _MOORE[(d - 1) % 8][1]
                return (nx, ny), _MOORE.index((px - nx, py - ny))
        return None, back

    path = [start]
    first, back = step(start, 0)
    if first is None:
        return path
    cur = first
    while True:
        nxt, nback = step(cur, back)
        if cur == start and nxt == first:
            break
        path.append(cur)
        cur, back = nxt, nback
    return path


def outer_contours(mask) -> list[ContourPath]:
    """Moore-neighbour trace of the outer boundary of every component.

    Paths run clockwise on screen from each component's top-left pixel, in
    label order. Tracing stops when the first move out of the start pixel
    would be repeated, so pixels on 1-pixel-wide parts appear twice.
    """
    lab = connected_components(mask)
    paths = []
    for i, sl in enumerate(ndimage.find_objects(lab.labels), start=1):
        comp = lab.labels[sl] == i
        ys, xs = np.nonzero(comp)
        start = (int(xs[0]), int(ys[0]))
        ox, oy = sl[1].start, sl[0].start
        pts = tuple((x + ox, y + oy) for x, y in _trace(comp, start))
        paths.append(ContourPath(pts, closed=True))
    return paths


def bresenham(p0: tuple[int, int], p1: tuple[int, int]) -> list[tuple[int, int]]:
    """Integer line from ``p0`` to ``p1``, both endpoints included."""
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = [(x0, y0)]
    while (x0, y0) != (x1, y1):
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
        out.append((x0, y0))
    return out


def fill_closed_path(path: ContourPath, width: int, height: int) -> np.ndarray:
    """Rasterize a closed pixel path and everything it encloses.

    A pixel is interior when it cannot reach the image border through
    4-connected non-path pixels; for 8-connected paths this coincides with
    the even-odd rule evaluated at pixel centres.
    """
    out = np.zeros((height, width), dtype=np.uint8)
    for x, y in path.points:
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"path point {(x, y)} outside {width}x{height}")
        out[y, x] = 1
    if len(set(path.points)) < 3:
        return out
    free = np.pad(out == 0, 1, constant_values=True)
    lab, _ = ndimage.label(free, structure=_FOUR)
    outside = lab == lab[0, 0]
    return (~outside[1:-1, 1:-1]).astype(np.uint8)
