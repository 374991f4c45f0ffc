"""The Myopic Model: a three-layer CNN that only sees a 3x3 window.

Layer 1 is a 3x3 convolution, layers 2 and 3 are 1x1 convolutions, so the
network is a per-pixel MLP over the replicate-padded 3x3 patch around each
pixel. It is trained on weak annotations with a cross-entropy that drops the
least confident 10% of each label region (the ignore conditions), which lets
the abundant true background outvote the mislabelled pixels around a crack.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .raster import as_gray, as_mask, check_same_shape

EPS = 1e-7
MAGIC = b"MYO1"


@dataclass(frozen=True)
class MyopicTrainConfig:
    c1: int = 16
    c2: int = 16
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    q: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ValueError("q must be in (0, 1]")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError("channel counts must be positive")


@dataclass
class MyopicParams:
    """Weights in declaration order: w1 (9, c1), b1, w2 (c1, c2), b2, w3 (c2, 1), b3.

    ``w1`` row ``k`` is the 3x3 kernel tap ``(k // 3, k % 3)`` in (dy, dx)
    order. Hidden activations are tanh, the output is a sigmoid.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    @property
    def c1(self) -> int:
        return self.w1.shape[1]

    @property
    def c2(self) -> int:
        return self.w2.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.NAMES]

    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "MyopicParams":
        return MyopicParams(*(a.copy() for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def to_bytes(self) -> bytes:
        head = MAGIC + struct.pack("<II", self.c1, self.c2)
        return head + self.flat().astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "MyopicParams":
        if len(data) < 12 or data[:4] != MAGIC:
            raise ValueError("not a MYO1 parameter file")
        c1, c2 = struct.unpack("<II", data[4:12])
        shapes = [(9, c1), (c1,), (c1, c2), (c2,), (c2, 1), (1,)]
        n = sum(math.prod(s) for s in shapes)
        if len(data) != 12 + 4 * n:
            raise ValueError(f"expected {12 + 4 * n} bytes, got {len(data)}")
        flat = np.frombuffer(data, dtype="<f4", offset=12).astype(np.float64)
        out, i = [], 0
        for s in shapes:
            k = math.prod(s)
            out.append(flat[i:i + k].reshape(s).copy())
            i += k
        return cls(*out)


def init_myopic(cfg: MyopicTrainConfig) -> MyopicParams:
    rng = np.random.default_rng(cfg.seed)

    def layer(fan_in, fan_out):
        lim = math.sqrt(3.0 / fan_in)
        return rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)

    w1, b1 = layer(9, cfg.c1)
    w2, b2 = layer(cfg.c1, cfg.c2)
    w3, b3 = layer(cfg.c2, 1)
    return MyopicParams(w1, b1, w2, b2, w3, b3)


def patches3x3(image: np.ndarray) -> np.ndarray:
    """(H*W, 9) matrix of replicate-padded 3x3 neighbourhoods."""
    h, w = image.shape
    p = np.pad(image, 1, mode="edge")
    cols = [p[dy:dy + h, dx:dx + w].ravel() for dy in range(3) for dx in range(3)]
    return np.stack(cols, axis=1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(params: MyopicParams, image: np.ndarray):
    x = patches3x3(image)
    z1 = x @ params.w1 + params.b1
    a1 = np.tanh(z1)
    z2 = a1 @ params.w2 + params.b2
    a2 = np.tanh(z2)
    z3 = (a2 @ params.w3)[:, 0] + params.b3[0]
    return x, z1, a1, z2, a2, _sigmoid(z3)


def myopic_forward(params: MyopicParams, image) -> np.ndarray:
    img = as_gray(image)
    return _forward(params, img)[-1].reshape(img.shape)


@dataclass(frozen=True)
class IgnoreSets:
    H: np.ndarray  # flat pixel indices, kept crack pixels
    B: np.ndarray  # flat pixel indices, kept non-crack pixels
    q: float


def _keep(indices: np.ndarray, probs: np.ndarray, q: float, highest: bool) -> np.ndarray:
    k = math.ceil(q * len(indices))
    if k == 0:
        return indices[:0]
    key = -probs if highest else probs
    # lexsort: last key is primary; ties fall back to ascending pixel index
    order = np.lexsort((indices, key))
    return np.sort(indices[order[:k]])


def ignore_sets(probmap, lq, q: float) -> IgnoreSets:
    """Keep the ceil(q*n) most confident pixels of each label region."""
    if not 0 < q <= 1:
        raise ValueError("q must be in (0, 1]")
    p = np.asarray(probmap, dtype=np.float64)
    m = as_mask(lq)
    check_same_shape(p, m)
    pf, mf = p.ravel(), m.ravel()
    crack = np.flatnonzero(mf == 1)
    back = np.flatnonzero(mf == 0)
    return IgnoreSets(
        H=_keep(crack, pf[crack], q, highest=True),
        B=_keep(back, pf[back], q, highest=False),
        q=q,
    )


def ignore_ce_loss(probmap, sets: IgnoreSets) -> float:
    n = len(sets.H) + len(sets.B)
    if n == 0:
        raise ValueError("both ignore sets are empty")
    p = np.clip(np.asarray(probmap, dtype=np.float64).ravel(), EPS, 1 - EPS)
    total = -np.log(p[sets.H]).sum() - np.log(1 - p[sets.B]).sum()
    return float(total / n)


def loss_and_grads(params: MyopicParams, image: np.ndarray, sets: IgnoreSets):
    """Ignore-condition loss and its gradient for every parameter array."""
    x, z1, a1, z2, a2, p = _forward(params, image)
    n = len(sets.H) + len(sets.B)
    if n == 0:
        raise ValueError("both ignore sets are empty")
    pc = np.clip(p, EPS, 1 - EPS)
    loss = (-np.log(pc[sets.H]).sum() - np.log(1 - pc[sets.B]).sum()) / n

    inside = (p > EPS) & (p < 1 - EPS)
    dp = np.zeros_like(p)
    dp[sets.H] -= 1.0 / pc[sets.H]
    dp[sets.B] += 1.0 / (1 - pc[sets.B])
    dz3 = dp * inside * p * (1 - p) / n

    g_w3 = a2.T @ dz3[:, None]
    g_b3 = np.array([dz3.sum()])
    da2 = dz3[:, None] * params.w3[:, 0][None, :]
    dz2 = da2 * (1 - a2 * a2)
    g_w2 = a1.T @ dz2
    g_b2 = dz2.sum(axis=0)
    dz1 = (dz2 @ params.w2.T) * (1 - a1 * a1)
    g_w1 = x.T @ dz1
    g_b1 = dz1.sum(axis=0)
    return float(loss), MyopicParams(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)


def train_myopic(images, lq_masks, cfg: MyopicTrainConfig, log=None) -> MyopicParams:
    """Full-image SGD with momentum; ignore sets are rebuilt every pass."""
    if len(images) == 0:
        raise ValueError("empty training set")
    if len(images) != len(lq_masks):
        raise ValueError("images and masks differ in count")
    data = []
    for img, lq in zip(images, lq_masks):
        img, lq = as_gray(img), as_mask(lq)
        check_same_shape(img, lq)
        data.append((img, lq))

    params = init_myopic(cfg)
    velocity = [np.zeros_like(a) for a in params.arrays()]
    for epoch in range(cfg.epochs):
        total = 0.0
        for img, lq in data:
            probs = myopic_forward(params, img)
            sets = ignore_sets(probs, lq, cfg.q)
            loss, grads = loss_and_grads(params, img, sets)
            total += loss
            for a, v, g in zip(params.arrays(), velocity, grads.arrays()):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                a += v
        if log is not None:
            log(epoch, total / len(data))
    return params


# below this magnitude central differences at h=1e-5 are dominated by rounding
GRAD_FLOOR = 1e-6


def _relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), GRAD_FLOOR)


def finite_difference_check(loss_fn, arrays, analytic, h: float = 1e-5) -> float:
    """Max relative error of ``analytic`` vs central differences of ``loss_fn``.

    ``arrays`` are perturbed in place and restored.
    """
    worst = 0.0
    for a, g in zip(arrays, analytic):
        num = np.zeros_like(a)
        flat = a.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            nflat[i] = (up - down) / (2 * h)
        worst = max(worst, float(_relative_error(g, num).max(initial=0.0)))
    return worst


def grad_check(params: MyopicParams, image, lq, q: float) -> float:
    """Analytic vs finite-difference gradients with the ignore sets frozen."""
    img = as_gray(image)
    p = params.copy()
    sets = ignore_sets(myopic_forward(p, img), lq, q)
    _, grads = loss_and_grads(p, img, sets)

    def loss_fn():
        return ignore_ce_loss(myopic_forward(p, img), sets)

    return finite_difference_check(loss_fn, p.arrays(), grads.arrays())
