"""Synthetic weak annotations and a procedural toy-crack dataset.

A weak annotation is made by dilating a precise mask and warping it with an
elastic deformation whose magnitude is searched until the recall of the warp
against the precise mask falls inside a target band.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import as_mask, bresenham, check_same_shape, dilate


@dataclass(frozen=True)
class SynthConfig:
    n_dil: int = 4
    sigma: float = 12.0
    alpha_affine: float = 0.2
    r_low: float = 0.925
    r_high: float = 0.975
    alpha_min: float = 10.0
    alpha_max: float = 10000.0
    max_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.r_low < self.r_high <= 1:
            raise ValueError("need 0 < r_low < r_high <= 1")
        if not self.alpha_min < self.alpha_max:
            raise ValueError("need alpha_min < alpha_max")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.n_dil < 0:
            raise ValueError("n_dil must be >= 0")


@dataclass(frozen=True)
class SynthResult:
    weak_mask: np.ndarray
    achieved_recall: float
    alpha_used: float
    iterations: int


class SynthesisFailed(RuntimeError):
    """The alpha search ran out of budget; carries the closest candidate."""

    def __init__(self, message: str, best: SynthResult | None):
        super().__init__(message)
        self.best = best


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur truncated at 3 sigma, mirror boundary."""
    k = _gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(values, dtype=np.float64), k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


@dataclass(frozen=True)
class _Warp:
    """A frozen displacement pattern; ``alpha`` scales the elastic part."""

    dx: np.ndarray
    dy: np.ndarray
    affine: np.ndarray  # 2x3, maps output (x, y, 1) -> source (x, y)

    @classmethod
    def draw(cls, shape, sigma: float, alpha_affine: float, rng: np.random.Generator) -> "_Warp":
        h, w = shape
        dx = gaussian_smooth(rng.uniform(-1.0, 1.0, size=(h, w)), sigma)
        dy = gaussian_smooth(rng.uniform(-1.0, 1.0, size=(h, w)), sigma)
        src = np.array([[0.0, 0.0], [w - 1.0, 0.0], [0.0, h - 1.0]])
        dst = src + rng.uniform(-alpha_affine, alpha_affine, size=(3, 2))
        # solve for A with A @ [dst, 1] = src (inverse mapping used by sampling)
        lhs = np.hstack([dst, np.ones((3, 1))])
        if np.linalg.matrix_rank(lhs) < 3:
            affine = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        else:
            affine = np.linalg.solve(lhs, src).T
        return cls(dx, dy, affine)

    def apply(self, mask: np.ndarray, alpha: float) -> np.ndarray:
        h, w = mask.shape
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        a = self.affine
        sx = a[0, 0] * xs + a[0, 1] * ys + a[0, 2] + alpha * self.dx
        sy = a[1, 0] * xs + a[1, 1] * ys + a[1, 2] + alpha * self.dy
        ix = np.rint(sx).astype(np.int64)
        iy = np.rint(sy).astype(np.int64)
        inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        out = np.zeros_like(mask)
        out[inside] = mask[iy[inside], ix[inside]]
        return out


def elastic_transform(mask, alpha: float, sigma: float, alpha_affine: float, seed) -> np.ndarray:
    """Warp a mask by a smoothed random field plus a jittered affine map.

    Nearest-neighbour sampling keeps the output binary; samples falling
    outside the image read as background.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    m = as_mask(mask)
    if alpha == 0 and alpha_affine == 0:
        return m.copy()
    warp = _Warp.draw(m.shape, sigma, alpha_affine, np.random.default_rng(seed))
    return warp.apply(m, alpha)


def recall(candidate, precise) -> float:
    c = as_mask(candidate)
    p = as_mask(precise)
    check_same_shape(c, p)
    total = int(p.sum())
    if total == 0:
        return 1.0
    return float(np.logical_and(c, p).sum()) / total


def synthesize_weak(precise, cfg: SynthConfig) -> SynthResult:
    """Dilate, then search the warp magnitude until recall lands in band.

    The random field is drawn once per call and only its scale changes
    between trials. Each trial draws alpha uniformly from the current
    bracket; a recall below the band lowers the upper bound to that alpha,
    a recall above it raises the lower bound.
    """
    p = as_mask(precise)
    if not p.any():
        raise ValueError("precise mask is empty")
    rng = np.random.default_rng(cfg.seed)
    warp = _Warp.draw(p.shape, cfg.sigma, cfg.alpha_affine, rng)
    dilated = dilate(p, cfg.n_dil)
    lo, hi = cfg.alpha_min, cfg.alpha_max
    target = 0.5 * (cfg.r_low + cfg.r_high)
    best = None
    for it in range(1, cfg.max_iters + 1):
        alpha = float(rng.uniform(lo, hi))
        cand = warp.apply(dilated, alpha)
        r = recall(cand, p)
        res = SynthResult(cand, r, alpha, it)
        if best is None or abs(r - target) < abs(best.achieved_recall - target):
            best = res
        if cfg.r_low <= r <= cfg.r_high:
            return res
        if r < cfg.r_low:
            hi = alpha
        else:
            lo = alpha
    raise SynthesisFailed(
        f"no alpha gave recall in [{cfg.r_low}, {cfg.r_high}] within {cfg.max_iters} draws "
        f"(closest r={best.achieved_recall:.4f})",
        best,
    )


CRACK_DRIFT_SCALE = 6.0
PIXEL_NOISE = 0.02


@dataclass(frozen=True)
class ToyConfig:
    """Procedural crack images.

    Brightness pairs are (mean, stddev). The background stddev applies to a
    texture smoothed at ``noise_texture_scale`` pixels; the crack stddev to a
    slowly drifting field, so some crack stretches are faint.
    """

    image_size: int = 128
    crack_count: tuple[int, int] = (1, 3)
    crack_width: tuple[int, int] = (2, 4)
    crack_brightness: tuple[float, float] = (0.35, 0.12)
    background_brightness: tuple[float, float] = (0.6, 0.05)
    noise_texture_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("crack_brightness", "background_brightness"):
            mean = getattr(self, name)[0]
            if not 0 <= mean <= 1:
                raise ValueError(f"{name} mean must be in [0, 1]")
        if self.crack_count[0] < 0 or self.crack_count[0] > self.crack_count[1]:
            raise ValueError("bad crack_count range")
        if self.crack_width[0] < 1 or self.crack_width[0] > self.crack_width[1]:
            raise ValueError("bad crack_width range")


def dark_crack_preset(**kw) -> ToyConfig:
    return ToyConfig(**kw)


def bright_crack_preset(**kw) -> ToyConfig:
    """Inverted contrast: cracks brighter than the surface."""
    kw.setdefault("crack_brightness", (0.75, 0.1))
    kw.setdefault("background_brightness", (0.45, 0.05))
    return ToyConfig(**kw)


def _crack_polyline(rng: np.random.Generator, size: int) -> list[tuple[int, int]]:
    # a wandering walk entering from one edge
    edge = rng.integers(4)
    t = rng.uniform(0.15, 0.85) * (size - 1)
    start, heading = {
        0: ((t, 0.0), math.pi / 2),
        1: ((size - 1.0, t), math.pi),
        2: ((t, size - 1.0), -math.pi / 2),
        3: ((0.0, t), 0.0),
    }[int(edge)]
    x, y = start
    heading += rng.uniform(-0.6, 0.6)
    pts = [(int(round(x)), int(round(y)))]
    seg = size / 8.0
    for _ in range(24):
        heading += rng.normal(0.0, 0.35)
        x += seg * math.cos(heading)
        y += seg * math.sin(heading)
        xi = int(round(min(max(x, 0), size - 1)))
        yi = int(round(min(max(y, 0), size - 1)))
        pts.append((xi, yi))
        if not (0 <= x < size and 0 <= y < size):
            break
    return pts


def gen_toy_sample(cfg: ToyConfig, index: int) -> tuple[np.ndarray, np.ndarray]:
    """One (image, precise mask) pair, deterministic in ``(cfg.seed, index)``."""
    rng = np.random.default_rng([cfg.seed, index])
    n = cfg.image_size
    mask = np.zeros((n, n), dtype=np.uint8)
    count = int(rng.integers(cfg.crack_count[0], cfg.crack_count[1] + 1))
    for _ in range(count):
        pts = _crack_polyline(rng, n)
        width = int(rng.integers(cfg.crack_width[0], cfg.crack_width[1] + 1))
        line = np.zeros_like(mask)
        for a, b in zip(pts, pts[1:]):
            for x, y in bresenham(a, b):
                line[y, x] = 1
        # widen by a (width x width) square, anchored at the centreline
        thick = np.zeros_like(mask)
        ys, xs = np.nonzero(line)
        off = (width - 1) // 2
        for dy in range(width):
            for dx in range(width):
                yy = np.clip(ys + dy - off, 0, n - 1)
                xx = np.clip(xs + dx - off, 0, n - 1)
                thick[yy, xx] = 1
        mask |= thick

    bg_mean, bg_std = cfg.background_brightness
    cr_mean, cr_std = cfg.crack_brightness
    image = bg_mean + bg_std * _unit_texture(rng, n, cfg.noise_texture_scale)
    # crack contrast drifts slowly along the crack, leaving faint stretches
    crack_vals = cr_mean + cr_std * _unit_texture(rng, n, CRACK_DRIFT_SCALE)
    crack_vals += PIXEL_NOISE * rng.normal(0.0, 1.0, size=(n, n))
    image = np.where(mask == 1, crack_vals, image)
    return np.clip(image, 0.0, 1.0), mask


def _unit_texture(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    t = rng.normal(0.0, 1.0, size=(n, n))
    if scale > 0:
        t = gaussian_smooth(t, scale)
        t /= max(t.std(), 1e-12)
    return t


def toy_dataset(cfg: ToyConfig, count: int, start: int = 0):
    return [gen_toy_sample(cfg, i) for i in range(start, start + count)]


__all__ = [
    "SynthConfig", "SynthResult", "SynthesisFailed", "ToyConfig",
    "elastic_transform", "recall", "synthesize_weak", "gen_toy_sample",
    "dark_crack_preset", "bright_crack_preset", "gaussian_smooth", "toy_dataset",
]
