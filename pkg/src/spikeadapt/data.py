"""Synthetic shape datasets, test-time corruptions, and IDX image loading."""

from __future__ import annotations

import numpy as np

from .container import load_container, save_container
from .errors import (BadMagic, CountMismatch, InvalidConfig, InvalidSeverity,
                     TruncatedFile)

# severity -> parameter, index 1..5
GAUSSIAN_SIGMA = (None, 0.04, 0.06, 0.08, 0.12, 0.18)
IMPULSE_FRACTION = (None, 0.01, 0.02, 0.04, 0.07, 0.10)
CONTRAST_SCALE = (None, 0.75, 0.6, 0.45, 0.3, 0.2)
BRIGHTNESS_SHIFT = (None, 0.05, 0.1, 0.15, 0.2, 0.3)
SHOT_RATE = (None, 60.0, 25.0, 12.0, 5.0, 3.0)
PIXELATE_BLOCK = (None, 1, 2, 2, 4, 4)

CORRUPTIONS = ("gaussian", "impulse", "contrast", "brightness", "shot",
               "pixelate")


# -- synthetic shapes ------------------------------------------------------------

def _paint_hbar(img, rng, lo, hi):
    row = rng.integers(3, img.shape[0] - 5)
    img[row:row + 3, 2:-2] = rng.uniform(lo, hi)


def _paint_vbar(img, rng, lo, hi):
    col = rng.integers(3, img.shape[1] - 5)
    img[2:-2, col:col + 3] = rng.uniform(lo, hi)


def _paint_disc(img, rng, lo, hi):
    h, w = img.shape
    cy = rng.integers(h // 2 - 2, h // 2 + 3)
    cx = rng.integers(w // 2 - 2, w // 2 + 3)
    r = rng.integers(3, 5)
    yy, xx = np.ogrid[:h, :w]
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = rng.uniform(lo, hi)


def _paint_ring(img, rng, lo, hi):
    h, w = img.shape
    cy = rng.integers(h // 2 - 2, h // 2 + 3)
    cx = rng.integers(w // 2 - 2, w // 2 + 3)
    r = rng.integers(4, 6)
    yy, xx = np.ogrid[:h, :w]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    img[(d2 <= r * r) & (d2 >= (r - 2) ** 2)] = rng.uniform(lo, hi)


def _paint_diag(img, rng, lo, hi):
    h, w = img.shape
    off = rng.integers(-2, 3)
    for i in range(h):
        j = i + off
        for dj in (-1, 0, 1):
            if 0 <= j + dj < w:
                img[i, j + dj] = rng.uniform(lo, hi)


def _paint_cross(img, rng, lo, hi):
    h, w = img.shape
    cy = rng.integers(h // 2 - 2, h // 2 + 3)
    cx = rng.integers(w // 2 - 2, w // 2 + 3)
    v = rng.uniform(lo, hi)
    img[cy - 1:cy + 2, 2:-2] = v
    img[2:-2, cx - 1:cx + 2] = v


def _paint_corners(img, rng, lo, hi):
    k = rng.integers(3, 5)
    v = rng.uniform(lo, hi)
    img[:k, :k] = v
    img[-k:, -k:] = v


def _paint_checker(img, rng, lo, hi):
    h, w = img.shape
    k = int(rng.integers(2, 4))
    yy, xx = np.indices((h, w))
    img[((yy // k + xx // k) % 2) == 0] = rng.uniform(lo, hi)


def _paint_tee(img, rng, lo, hi):
    h, w = img.shape
    v = rng.uniform(lo, hi)
    row = rng.integers(2, 5)
    img[row:row + 3, 2:-2] = v
    img[row:-2, w // 2 - 1:w // 2 + 2] = v


def _paint_frame(img, rng, lo, hi):
    m = int(rng.integers(1, 3))
    v = rng.uniform(lo, hi)
    img[m:-m, m:m + 2] = v
    img[m:-m, -m - 2:-m] = v
    img[m:m + 2, m:-m] = v
    img[-m - 2:-m, m:-m] = v


_PAINTERS = (_paint_hbar, _paint_vbar, _paint_disc, _paint_ring, _paint_diag,
             _paint_cross, _paint_corners, _paint_checker, _paint_tee,
             _paint_frame)


def gen_synthetic(n: int, num_classes: int = 3, image_size: int = 16,
                  seed: int = 0, contrast: float = 0.45,
                  background_noise: float = 0.03):
    """Labelled shape images, 3 channels, values in [0, 1].

    Each class is a geometric figure (bars, disc, ring, diagonal, ...)
    drawn with positional jitter over a noisy mid-grey background; the
    figure brightness sits `contrast` above the background band.  Shapes
    repeat identically across the three channels up to per-channel gain.
    """
    if n < 1:
        raise InvalidConfig("need at least one sample")
    if not 1 <= num_classes <= len(_PAINTERS):
        raise InvalidConfig(f"num_classes must lie in [1, {len(_PAINTERS)}]")
    if image_size < 8:
        raise InvalidConfig("images below 8x8 cannot hold the shapes")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, num_classes, n)
    x = np.empty((n, 3, image_size, image_size))
    for i in range(n):
        base = rng.uniform(0.28, 0.38)
        canvas = np.full((image_size, image_size), base)
        lo = base + contrast * 0.85
        hi = min(base + contrast * 1.15, 0.98)
        _PAINTERS[y[i]](canvas, rng, lo, hi)
        gains = rng.uniform(0.9, 1.0, 3)
        for c in range(3):
            x[i, c] = canvas * gains[c]
        x[i] += rng.normal(0.0, background_noise, (3, image_size, image_size))
    return np.clip(x, 0.0, 1.0), y.astype(np.int64)


# -- corruptions -----------------------------------------------------------------

def corrupt(x: np.ndarray, kind: str, severity: int,
            seed: int = 0) -> np.ndarray:
    """Apply one corruption at the given severity (1..5) to a [N,C,H,W]
    batch in [0, 1].  Deterministic for a fixed seed; the input is never
    modified in place."""
    if kind not in CORRUPTIONS:
        raise InvalidConfig(f"unknown corruption {kind!r}; "
                            f"choose from {CORRUPTIONS}")
    if not isinstance(severity, (int, np.integer)) or not 1 <= severity <= 5:
        raise InvalidSeverity(f"severity must be an integer in [1, 5], "
                              f"got {severity!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise InvalidConfig("expected a [N, C, H, W] batch")
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        out = x + rng.normal(0.0, GAUSSIAN_SIGMA[severity], x.shape)
    elif kind == "impulse":
        p = IMPULSE_FRACTION[severity]
        out = x.copy()
        hit = rng.random(x.shape) < p
        out[hit] = (rng.random(x.shape) < 0.5)[hit].astype(np.float64)
    elif kind == "contrast":
        m = x.mean(axis=(1, 2, 3), keepdims=True)
        out = (x - m) * CONTRAST_SCALE[severity] + m
    elif kind == "brightness":
        out = x + BRIGHTNESS_SHIFT[severity]
    elif kind == "shot":
        lam = SHOT_RATE[severity]
        out = rng.poisson(x * lam).astype(np.float64) / lam
    else:  # pixelate
        k = PIXELATE_BLOCK[severity]
        if k == 1:
            out = x.copy()
        else:
            n, c, h, w = x.shape
            if h % k or w % k:
                raise InvalidConfig(f"pixelate block {k} must divide {h}x{w}")
            blocks = x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
            out = np.repeat(np.repeat(blocks, k, axis=2), k, axis=3)
    return np.clip(out, 0.0, 1.0)


# -- IDX image files -------------------------------------------------------------

_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801


def load_idx(path):
    """One IDX file: images [N,H,W] scaled to [0,1] or labels [N] int64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: no room for a magic number")
    magic = int.from_bytes(blob[:4], "big")
    if magic == _IDX_IMAGES:
        ndim = 3
    elif magic == _IDX_LABELS:
        ndim = 1
    else:
        raise BadMagic(f"{path}: magic {magic:#010x} is not an IDX "
                       f"image or label file")
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise TruncatedFile(f"{path}: header cut short")
    dims = [int.from_bytes(blob[4 + 4 * i:8 + 4 * i], "big")
            for i in range(ndim)]
    count = int(np.prod(dims))
    if len(blob) < header + count:
        raise TruncatedFile(
            f"{path}: payload holds {len(blob) - header} of {count} bytes")
    raw = np.frombuffer(blob, dtype=np.uint8, count=count, offset=header)
    if ndim == 1:
        return raw.astype(np.int64)
    return raw.reshape(dims).astype(np.float64) / 255.0


def load_idx_pair(images_path, labels_path, channels: int = 3):
    """Matched images+labels, images replicated to the requested channels."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise BadMagic(f"{images_path} does not hold images")
    if labels.ndim != 1:
        raise BadMagic(f"{labels_path} does not hold labels")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images vs "
                            f"{labels.shape[0]} labels")
    x = np.repeat(images[:, None, :, :], channels, axis=1)
    return x, labels


# -- cached datasets --------------------------------------------------------------

def save_dataset(path, x, y, meta=None) -> None:
    meta = dict(meta or {})
    meta["format"] = "dataset"
    save_container(path, meta, {"x": np.asarray(x, dtype=np.float64),
                                "y": np.asarray(y, dtype=np.int64)})


def load_dataset(path):
    meta, arrays = load_container(path)
    if meta.get("format") != "dataset":
        raise InvalidConfig(f"{path} is not a dataset container")
    return arrays["x"], arrays["y"], meta
