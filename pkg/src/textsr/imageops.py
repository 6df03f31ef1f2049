"""Raster helpers shared across the package.

Images are plain ``numpy`` arrays, float64 in ``[0, 1]``, shaped ``(H, W)``
for single channel or ``(H, W, C)`` otherwise. PNG files are 8-bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def as_image(img, name="image"):
    """Validate ``img`` and return it as a float64 array.

    Accepts uint8 input (scaled by 1/255) or floats already in ``[0, 1]``.
    """
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64, copy=False)
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] not in (1, 3, 4):
        raise ValueError(f"{name} must have 1, 3 or 4 channels, got {arr.shape[2]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} is empty: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def to_luminance(img):
    """BT.601 luminance of an RGB image; 2-D input is returned unchanged."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img[..., :3] @ LUMA_WEIGHTS


def _cubic(x, a=-0.5):
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(
        x <= 1,
        (a + 2) * x3 - (a + 3) * x2 + 1,
        np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0),
    )


def _linear(x):
    return np.clip(1.0 - np.abs(x), 0.0, None)


_KERNELS = {"cubic": (_cubic, 2.0), "linear": (_linear, 1.0)}


def _resize_matrix(n_in, n_out, kernel, antialias):
    func, support = _KERNELS[kernel]
    scale = n_out / n_in
    # widen the kernel when shrinking so it acts as a low-pass filter
    stretch = 1.0 / scale if (antialias and scale < 1) else 1.0
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    radius = support * stretch
    offsets = np.arange(int(np.floor(-radius)) - 1, int(np.ceil(radius)) + 2)
    left = np.floor(centers).astype(int)
    idx = left[:, None] + offsets[None, :]
    w = func((centers[:, None] - idx) / stretch)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.repeat(np.arange(n_out), idx.shape[1]), idx.ravel()), w.ravel())
    return mat


def resize(img, height, width, kernel="cubic", antialias=True):
    """Separable resize with pixel-center alignment and edge replication.

    ``kernel="cubic"`` is Catmull-Rom (a = -0.5); ``"linear"`` is bilinear.
    Downsampling stretches the kernel by the scale factor (antialiasing).
    Values are not clipped.
    """
    img = np.asarray(img, dtype=np.float64)
    rows = _resize_matrix(img.shape[0], height, kernel, antialias)
    cols = _resize_matrix(img.shape[1], width, kernel, antialias)
    out = np.tensordot(rows, img, axes=(1, 0))
    out = np.moveaxis(np.tensordot(cols, out, axes=(1, 1)), 0, 1)
    return out


def bicubic_downsample(img, scale):
    h, w = img.shape[:2]
    if h % scale or w % scale:
        raise ValueError(f"image size {h}x{w} not divisible by scale {scale}")
    return np.clip(resize(img, h // scale, w // scale), 0.0, 1.0)


def bicubic_upsample(img, scale):
    h, w = img.shape[:2]
    return np.clip(resize(img, h * scale, w * scale), 0.0, 1.0)


def load_png(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return arr.astype(np.float64) / 255.0


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255).astype(np.uint8)


def save_png(img, path):
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def png_size(path):
    """(height, width) from the PNG header, without decoding pixels."""
    with Image.open(path) as im:
        w, h = im.size
    return h, w
