"""Binary text edge maps (Canny) and edge-augmented network input."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imageops import as_image, to_luminance

# neighbor offsets (drow, dcol) along each quantized gradient direction;
# angles are measured with x = column, y = row (pointing down)
_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1))  # 0, 45, 90, 135 degrees

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T
MAG_DECIMALS = 12


@dataclass(frozen=True)
class CannyParams:
    """Thresholds are fractions of the image's peak gradient magnitude."""

    gaussian_sigma: float = 1.4
    low_threshold: float = 0.1
    high_threshold: float = 0.3

    def __post_init__(self):
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be > 0")
        if not (0 <= self.low_threshold <= 1 and 0 <= self.high_threshold <= 1):
            raise ValueError("thresholds must lie in [0, 1]")
        if not self.low_threshold < self.high_threshold:
            raise ValueError("low_threshold must be below high_threshold")


@dataclass
class CannyStages:
    smoothed: np.ndarray
    magnitude: np.ndarray  # normalized to a peak of 1 (all zeros if flat)
    direction: np.ndarray  # quantized bin 0..3
    suppressed: np.ndarray  # magnitude after non-maximum suppression
    edges: np.ndarray


def gaussian_kernel(sigma):
    radius = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def quantize_direction(gx, gy):
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    return (np.floor((angle + 22.5) / 45.0).astype(int)) % 4


def non_maximum_suppression(mag, bins):
    """Keep pixels that peak along their gradient direction.

    Ties are broken toward the negative side (a pixel must strictly beat its
    predecessor and at least match its successor) so plateaus thin to one
    pixel. Border pixels are always suppressed.
    """
    h, w = mag.shape
    out = np.zeros_like(mag)
    padded = np.pad(mag, 1)
    core = mag[1:-1, 1:-1]
    keep = np.zeros((h - 2, w - 2), dtype=bool)
    for b, (dr, dc) in enumerate(_DIRECTIONS):
        ahead = padded[2 + dr : h + dr, 2 + dc : w + dc]
        behind = padded[2 - dr : h - dr, 2 - dc : w - dc]
        sel = bins[1:-1, 1:-1] == b
        keep |= sel & (core > behind) & (core >= ahead)
    out[1:-1, 1:-1] = np.where(keep, core, 0.0)
    return out


def hysteresis(suppressed, low, high):
    """Strong pixels plus weak pixels 8-connected (through weak ones) to a strong one."""
    candidates = suppressed >= low
    strong = suppressed >= high
    labels, n = ndimage.label(candidates, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros(suppressed.shape, dtype=np.uint8)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return has_strong[labels].astype(np.uint8)


def canny_stages(img, p=CannyParams()):
    img = as_image(img)
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ValueError("canny expects a 1- or 3-channel image")
    gray = to_luminance(img)
    if min(gray.shape) < 3:
        raise ValueError(f"image too small for edge detection: {gray.shape}")
    k = gaussian_kernel(p.gaussian_sigma)
    smoothed = ndimage.correlate1d(gray, k, axis=0, mode="reflect")
    smoothed = ndimage.correlate1d(smoothed, k, axis=1, mode="reflect")
    gx = ndimage.correlate(smoothed, SOBEL_X, mode="reflect")
    gy = ndimage.correlate(smoothed, SOBEL_Y, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    # flat images (up to round-off) have no edges
    mag = mag / peak if peak > 1e-9 else np.zeros_like(mag)
    # round away filter round-off so mirror-symmetric edges tie exactly in NMS
    mag = np.round(mag, MAG_DECIMALS)
    bins = quantize_direction(gx, gy)
    suppressed = non_maximum_suppression(mag, bins)
    if peak > 1e-9:
        edges = hysteresis(suppressed, p.low_threshold, p.high_threshold)
    else:
        edges = np.zeros(gray.shape, dtype=np.uint8)
    return CannyStages(smoothed, mag, bins, suppressed, edges)


def canny(img, p=CannyParams()):
    """Binary edge map (uint8, 1 = edge) of an image in ``[0, 1]``."""
    return canny_stages(img, p).edges


def concat_edge_channel(lr, c_lr):
    """Append the edge map as a fourth channel of an RGB image."""
    lr = np.asarray(lr, dtype=np.float64)
    c_lr = np.asarray(c_lr)
    if lr.ndim != 3 or lr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {lr.shape}")
    if c_lr.shape != lr.shape[:2]:
        raise ValueError(f"edge map {c_lr.shape} does not match image {lr.shape[:2]}")
    return np.concatenate([lr, c_lr[..., None].astype(np.float64)], axis=2)


def edge_for_pair(pair, p=CannyParams()):
    """(LR edge map, HR edge map) of a region pair."""
    return canny(pair.lr, p), canny(pair.hr, p)


def render_edges(edges, inverted=False):
    """Edge map as a displayable float image; ``inverted`` draws black edges on white."""
    e = np.asarray(edges, dtype=np.float64)
    return 1.0 - e if inverted else e
