"""Deterministic synthetic image datasets with pixel values in [0, 1]."""

from __future__ import annotations

import numpy as np

KINDS = ("stripes", "blobs", "xor-patch")


def _balanced_labels(rng, n: int, classes: int) -> np.ndarray:
    labels = np.arange(n) % classes
    return rng.permutation(labels)


def class_textures(classes: int, size: int, block: int = 2) -> np.ndarray:
    """Fixed +-1 textures on ``block``-pixel cells; two classes get a pattern and its negation."""
    rng = np.random.default_rng(0x7E57)
    cells = -(-size // block)
    base = rng.choice([-1.0, 1.0], size=(classes, cells, cells))
    if classes == 2:
        base[1] = -base[0]
    return np.kron(base, np.ones((block, block)))[:, :size, :size]


def make_dataset(kind: str, n: int, image_size: int = 8, classes: int = 2, seed: int = 0,
                 contrast: float = 0.3, noise: float = 0.1, background: float = 0.5,
                 channels: int = 1, texture: float = 0.0, flip: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x, y)`` with ``x`` of shape (n, channels, size, size).

    ``stripes``: a sinusoidal grating whose orientation encodes the class.
    ``blobs``: a Gaussian bump at one of ``classes`` positions on a circle.
    ``xor-patch``: two corner patches, class = XOR of their polarities
    (only ``classes=2``).
    Every image is ``background`` plus the pattern scaled by ``contrast``,
    plus i.i.d. Gaussian pixel noise of std ``noise``, clipped to [0, 1].

    Two optional knobs build a robust/non-robust feature split:
    ``flip`` is the probability that the main pattern is drawn for a wrong
    class, and ``texture`` is the amplitude of a faint, always-correct
    class-coded +-1 pixel texture (fixed per class, independent of ``seed``).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}, classes={classes}")
    if image_size < 4:
        raise ValueError(f"image_size must be >= 4, got {image_size}")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if not 0.0 <= flip < 1.0:
        raise ValueError(f"flip must lie in [0, 1), got {flip}")
    if kind == "xor-patch" and classes != 2:
        raise ValueError("xor-patch supports exactly 2 classes")
    rng = np.random.default_rng(seed)
    y = _balanced_labels(rng, n, classes)
    shown = y.copy()
    if flip > 0:
        flipped = rng.random(n) < flip
        shown[flipped] = (y[flipped] + rng.integers(1, classes, flipped.sum())) % classes
    s = image_size
    r, c = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    pattern = np.zeros((n, s, s))
    if kind == "stripes":
        theta = np.pi * shown / classes
        phase = rng.uniform(0, 2 * np.pi, n)
        freq = 2 * np.pi / 4.0
        proj = np.cos(theta)[:, None, None] * r + np.sin(theta)[:, None, None] * c
        pattern = np.sin(freq * proj + phase[:, None, None])
    elif kind == "blobs":
        ang = 2 * np.pi * shown / classes
        centre = (s - 1) / 2.0
        rad = s / 4.0
        cy = centre + rad * np.sin(ang) + rng.normal(0, 0.3, n)
        cx = centre + rad * np.cos(ang) + rng.normal(0, 0.3, n)
        d2 = (r[None] - cy[:, None, None]) ** 2 + (c[None] - cx[:, None, None]) ** 2
        pattern = 2.0 * np.exp(-d2 / (2 * (s / 8.0) ** 2)) - 0.5
    else:
        a = rng.integers(0, 2, n)
        b = a ^ shown
        h = s // 2
        pattern[:, :h, :h] = (2 * a - 1)[:, None, None]
        pattern[:, h:, h:] = (2 * b - 1)[:, None, None]
    img = background + contrast * pattern
    if texture:
        img = img + texture * class_textures(classes, s)[y]
    x = np.repeat(img[:, None], channels, axis=1)
    x = x + rng.normal(0.0, noise, x.shape)
    return np.clip(x, 0.0, 1.0), y.astype(np.int64)


def split(x, y, fraction: float = 0.8):
    k = int(round(len(x) * fraction))
    return (x[:k], y[:k]), (x[k:], y[k:])
