"""Built-in Macro Branch and probability-map import/export.

The network is a light seven-layer fully convolutional crack detector:
3x3 kernels everywhere, 6 filters per hidden layer, stride 2 in the second
and fourth layers, ReLU hidden units and a single logit channel. Logits live
on a quarter-resolution grid and are bilinearly upsampled for inference.
Training compares them against 4x4 max-pooled targets.

Heavier segmentation models plug in through PMAP files instead.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import as_gray, as_mask, check_same_shape
from .myopic import _relative_error

STRIDES = (1, 2, 1, 2, 1, 1, 1)
FACTOR = 4
PMAP_MAGIC = b"PMAP"
PMAP_MAX_PIXELS = 1 << 28


@dataclass(frozen=True)
class MacroTrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    epochs: int = 50
    seed: int = 0
    width: int = 6

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.width < 1:
            raise ValueError("width must be positive")


@dataclass
class MacroParams:
    weights: list[np.ndarray]  # (c_out, c_in * 9)
    biases: list[np.ndarray]
    strides: tuple[int, ...] = STRIDES

    def __post_init__(self):
        if len(self.weights) != 7 or len(self.biases) != 7 or len(self.strides) != 7:
            raise ValueError("the macro network has exactly 7 layers")

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "MacroParams":
        return MacroParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.strides)

    def save(self, path) -> None:
        arrays = {f"w{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        with open(path, "wb") as fh:
            np.savez(fh, strides=np.array(self.strides), **arrays)

    @classmethod
    def load(cls, path) -> "MacroParams":
        with np.load(path) as z:
            return cls([z[f"w{i}"] for i in range(7)], [z[f"b{i}"] for i in range(7)],
                       tuple(int(s) for s in z["strides"]))


def init_macro(cfg: MacroTrainConfig) -> MacroParams:
    rng = np.random.default_rng(cfg.seed)
    chans = [1] + [cfg.width] * 6 + [1]
    weights, biases = [], []
    for c_in, c_out in zip(chans, chans[1:]):
        lim = math.sqrt(6.0 / (9 * c_in))
        weights.append(rng.uniform(-lim, lim, size=(c_out, 9 * c_in)))
        biases.append(np.zeros(c_out))
    return MacroParams(weights, biases)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    cols = np.empty((c, 9, ho, wo))
    for dy in range(3):
        for dx in range(3):
            cols[:, dy * 3 + dx] = xp[:, dy:dy + stride * (ho - 1) + 1:stride,
                                      dx:dx + stride * (wo - 1) + 1:stride]
    cols = cols.reshape(c * 9, ho * wo)
    z = w @ cols + b[:, None]
    return z.reshape(-1, ho, wo), cols


def _conv_backward(dz: np.ndarray, cols: np.ndarray, w: np.ndarray, in_shape, stride: int):
    c, h, wd = in_shape
    _, ho, wo = dz.shape
    dzf = dz.reshape(dz.shape[0], -1)
    gw = dzf @ cols.T
    gb = dzf.sum(axis=1)
    dcols = (w.T @ dzf).reshape(c, 9, ho, wo)
    dxp = np.zeros((c, h + 2, wd + 2))
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy:dy + stride * (ho - 1) + 1:stride,
                dx:dx + stride * (wo - 1) + 1:stride] += dcols[:, dy * 3 + dx]
    # fold the replicated border back onto the edge pixels it copied
    dxp[:, :, 1] += dxp[:, :, 0]
    dxp[:, :, -2] += dxp[:, :, -1]
    dxp[:, 1, :] += dxp[:, 0, :]
    dxp[:, -2, :] += dxp[:, -1, :]
    return dxp[:, 1:-1, 1:-1], gw, gb


def _forward(params: MacroParams, image: np.ndarray, gates=None):
    """Logits and per-layer cache. ``gates`` replaces each ReLU's on/off
    pattern with a fixed one (used by the gradient check)."""
    x = image[None]
    cache = []
    for i, (w, b, s) in enumerate(zip(params.weights, params.biases, params.strides)):
        z, cols = _conv_forward(x, w, b, s)
        cache.append((x.shape, cols, z))
        if i < 6:
            x = z * gates[i] if gates is not None else np.maximum(z, 0.0)
        else:
            x = z
    return x[0], cache


def macro_logits(params: MacroParams, image) -> np.ndarray:
    img = as_gray(image)
    _check_divisible(img.shape)
    return _forward(params, img)[0]


def _check_divisible(shape):
    if shape[0] % FACTOR or shape[1] % FACTOR:
        raise ValueError(f"image dimensions {shape} must be divisible by {FACTOR}")


def _upsample_matrix(n_in: int, factor: int) -> np.ndarray:
    n_out = n_in * factor
    src = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    u = np.zeros((n_out, n_in))
    u[np.arange(n_out), i0] += 1 - frac
    u[np.arange(n_out), i1] += frac
    return u


def upsample_bilinear(z: np.ndarray, factor: int = FACTOR) -> np.ndarray:
    """Half-pixel-centred bilinear upsampling with clamped edges."""
    return _upsample_matrix(z.shape[0], factor) @ z @ _upsample_matrix(z.shape[1], factor).T


def _bce(logits, target) -> float:
    return float(np.mean(np.logaddexp(0.0, logits) - target * logits))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def infer_macro(params: MacroParams, image) -> np.ndarray:
    return _sigmoid(upsample_bilinear(macro_logits(params, image)))


def pool_targets(mask, factor: int = FACTOR) -> np.ndarray:
    """A coarse cell is crack if any pixel inside it is."""
    m = as_mask(mask)
    h, w = m.shape
    return m.reshape(h // factor, factor, w // factor, factor).max(axis=(1, 3)).astype(np.float64)


def loss_and_grads(params: MacroParams, image: np.ndarray, target: np.ndarray):
    """Mean binary cross-entropy on the coarse grid and its parameter gradients."""
    logits, cache = _forward(params, image)
    n = logits.size
    loss = _bce(logits, target)
    dz = ((_sigmoid(logits) - target) / n)[None]
    gws, gbs = [None] * 7, [None] * 7
    for i in reversed(range(7)):
        in_shape, cols, z = cache[i]
        if i < 6:
            dz = dz * (z > 0)
        dx, gws[i], gbs[i] = _conv_backward(dz, cols, params.weights[i], in_shape, params.strides[i])
        dz = dx
    return loss, MacroParams(gws, gbs, params.strides)


def train_macro(images, masks, cfg: MacroTrainConfig = MacroTrainConfig(), log=None) -> MacroParams:
    """SGD with momentum, one image per step, order shuffled per epoch by ``cfg.seed``."""
    if len(images) == 0:
        raise ValueError("empty training set")
    if len(images) != len(masks):
        raise ValueError("images and masks differ in count")
    data = []
    for img, m in zip(images, masks):
        img = as_gray(img)
        check_same_shape(img, m)
        _check_divisible(img.shape)
        data.append((img, pool_targets(m)))

    params = init_macro(cfg)
    order_rng = np.random.default_rng([cfg.seed, 1])
    velocity = [np.zeros_like(a) for a in params.arrays()]
    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for k in order_rng.permutation(len(data)):
            img, target = data[k]
            loss, grads = loss_and_grads(params, img, target)
            total += loss
            for a, v, g in zip(params.arrays(), velocity, grads.arrays()):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                a += v
        history.append(total / len(data))
        if log is not None:
            log(epoch, history[-1])
    return params


def grad_check(params: MacroParams, image, mask, h: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    A ReLU whose input lies within the step of zero flips between the +h and
    -h evaluations, and the difference then spans two linear pieces. For those
    coordinates the difference is retaken with every ReLU's on/off pattern
    frozen at the unperturbed point, which is the piece the analytic gradient
    (with its ``z > 0`` convention) differentiates.
    """
    img = as_gray(image)
    target = pool_targets(mask)
    p = params.copy()
    _, grads = loss_and_grads(p, img, target)
    _, base = _forward(p, img)
    frozen = [(c[2] > 0).astype(np.float64) for c in base[:6]]

    def evaluate(gates=None):
        logits, cache = _forward(p, img, gates)
        return _bce(logits, target), [c[2] > 0 for c in cache[:6]]

    worst = 0.0
    for a, g in zip(p.arrays(), grads.arrays()):
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up, pat_up = evaluate()
            flat[i] = old - h
            down, pat_down = evaluate()
            if any((u != f).any() or (d != f).any() for u, d, f in zip(pat_up, pat_down, frozen)):
                flat[i] = old + h
                up = evaluate(frozen)[0]
                flat[i] = old - h
                down = evaluate(frozen)[0]
            flat[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, float(_relative_error(np.array(gflat[i]), np.array(num))))
    return worst


def dataset_loss(params: MacroParams, images, masks) -> float:
    return float(np.mean([loss_and_grads(params, as_gray(i), pool_targets(m))[0]
                          for i, m in zip(images, masks)]))


def pad_to_multiple(image: np.ndarray, factor: int = FACTOR) -> np.ndarray:
    h, w = image.shape
    return np.pad(image, ((0, -h % factor), (0, -w % factor)), mode="edge")


def infer_padded(params: MacroParams, image) -> np.ndarray:
    """Replicate-pad to a multiple of 4, infer, crop back."""
    img = as_gray(image)
    return infer_macro(params, pad_to_multiple(img))[:img.shape[0], :img.shape[1]]


# -- PMAP: b"PMAP", u32 width, u32 height, width*height float32, all little-endian


class PmapError(ValueError):
    pass


class PmapFormatError(PmapError):
    pass


class PmapTruncatedError(PmapError):
    pass


class PmapDimensionError(PmapError):
    pass


def encode_probmap(prob) -> bytes:
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("probability map must be 2-D")
    h, w = p.shape
    return PMAP_MAGIC + struct.pack("<II", w, h) + p.astype("<f4").tobytes()


def decode_probmap(data: bytes) -> np.ndarray:
    if len(data) < 12:
        raise PmapTruncatedError(f"header needs 12 bytes, got {len(data)}")
    if data[:4] != PMAP_MAGIC:
        raise PmapFormatError(f"bad magic {data[:4]!r}")
    w, h = struct.unpack("<II", data[4:12])
    if w == 0 or h == 0 or w * h > PMAP_MAX_PIXELS:
        raise PmapDimensionError(f"unusable dimensions {w}x{h}")
    need = 12 + 4 * w * h
    if len(data) < need:
        raise PmapTruncatedError(f"{w}x{h} map needs {need} bytes, got {len(data)}")
    if len(data) > need:
        raise PmapFormatError(f"{len(data) - need} trailing bytes")
    values = np.frombuffer(data, dtype="<f4", offset=12, count=w * h).astype(np.float64)
    values = np.nan_to_num(values, nan=0.0)
    return np.clip(values, 0.0, 1.0).reshape(h, w)


def export_probmap(prob, path) -> None:
    Path(path).write_bytes(encode_probmap(prob))


def import_probmap(path) -> np.ndarray:
    return decode_probmap(Path(path).read_bytes())
