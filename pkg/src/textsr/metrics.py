"""Image-quality and recognition metrics: PSNR, SSIM, LPIPS, NED, ACC."""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .imageops import to_luminance

PSNR_INF = math.inf


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """PSNR in dB over all pixels and channels; ``math.inf`` when identical."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size, dtype=float) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, win):
    r = len(win) // 2
    out = ndimage.correlate1d(img, win, axis=0, mode="constant")
    out = ndimage.correlate1d(out, win, axis=1, mode="constant")
    return out[r:-r, r:-r] if r else out


def ssim_map(a, b, peak=1.0, window=11, sigma=1.5):
    a, b = _pair(a, b)
    a, b = to_luminance(a), to_luminance(b)
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} SSIM window")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    win = _gaussian_window(window, sigma)
    mu_a, mu_b = _filter_valid(a, win), _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a**2
    var_b = _filter_valid(b * b, win) - mu_b**2
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, peak=1.0):
    """Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows, on luminance."""
    return float(np.mean(ssim_map(a, b, peak)))


# --- LPIPS ------------------------------------------------------------------


class BackendError(RuntimeError):
    """The perceptual backend failed or is unavailable."""


class PerceptualBackend(Protocol):
    """Maps an image to a list of ``(C, H, W)`` feature maps.

    ``weights`` holds one nonnegative ``(C,)`` vector per layer. ``min_size``
    is the smallest spatial size the backend accepts.
    """

    weights: Sequence[np.ndarray]
    min_size: int
    concurrency_safe: bool

    def features(self, img: np.ndarray) -> list: ...


def _chw(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    return np.moveaxis(img, 2, 0)


class IdentityBackend:
    """Pixels as a single feature layer; used to check the LPIPS reduction."""

    min_size = 1
    concurrency_safe = True

    def __init__(self, channels=3):
        self.weights = [np.ones(channels)]

    def features(self, img):
        return [_chw(img)]


class RandomConvBackend:
    """Small fixed-seed convolutional backend for deterministic tests.

    Two 3x3 conv + ReLU layers (the second strided by 2); features from both
    layers are compared with unit weights.
    """

    concurrency_safe = True

    def __init__(self, channels=(8, 16), seed=0, in_channels=3):
        rng = np.random.default_rng(seed)
        self.kernels = []
        c_in = in_channels
        for c_out in channels:
            std = math.sqrt(2.0 / (9 * c_in))
            self.kernels.append(rng.normal(0.0, std, size=(c_out, c_in, 3, 3)))
            c_in = c_out
        self.weights = [np.ones(c) for c in channels]
        self.min_size = 2 ** len(channels) + 3

    @staticmethod
    def _conv(x, k, stride):
        c_in, h, w = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
        cols = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
        out = np.einsum("chwij,ocij->ohw", cols, k, optimize=True)
        return out[:, ::stride, ::stride]

    def features(self, img):
        x = _chw(img)
        if x.shape[0] == 1 and self.kernels[0].shape[1] == 3:
            x = np.repeat(x, 3, axis=0)
        feats = []
        for i, k in enumerate(self.kernels):
            x = np.maximum(self._conv(x, k, 1 if i == 0 else 2), 0.0)
            feats.append(x)
        return feats


class TorchVisionBackend:
    """Perceptual features from a pretrained torchvision network.

    Uses the five ReLU stages of ``alexnet`` or ``vgg16`` with unit channel
    weights unless ``weights`` is given. Pretrained weights must be available
    locally (or downloadable); otherwise a :class:`BackendError` is raised.
    """

    _LAYERS = {"alexnet": (1, 4, 7, 9, 11), "vgg16": (3, 8, 15, 22, 29)}
    concurrency_safe = False
    min_size = 32

    def __init__(self, net="alexnet", weights=None):
        try:
            import torch
            import torchvision
        except ImportError as exc:  # pragma: no cover
            raise BackendError(f"torchvision unavailable: {exc}") from exc
        try:
            model = getattr(torchvision.models, net)(weights="DEFAULT").features.eval()
        except Exception as exc:
            raise BackendError(f"could not load pretrained {net}: {exc}") from exc
        self._torch = torch
        self._model = model
        self._taps = self._LAYERS[net]
        if weights is None:
            with torch.no_grad():
                feats = self.features(np.zeros((self.min_size, self.min_size, 3)))
            weights = [np.ones(f.shape[0]) for f in feats]
        self.weights = weights

    def features(self, img):
        torch = self._torch
        x = _chw(img)
        if x.shape[0] == 1:
            x = np.repeat(x, 3, axis=0)
        t = torch.from_numpy(x[None].astype(np.float32)) * 2 - 1
        feats = []
        with torch.no_grad():
            for i, layer in enumerate(self._model):
                t = layer(t)
                if i in self._taps:
                    feats.append(t[0].double().numpy())
                if i >= self._taps[-1]:
                    break
        return feats


def _unit_normalize(f, eps=1e-10):
    norm = np.sqrt(np.sum(f * f, axis=0, keepdims=True))
    return f / (norm + eps)


def lpips(a, b, backend):
    """Sum over layers of the spatial mean of channel-weighted squared
    differences between unit-normalized feature vectors."""
    a, b = _pair(a, b)
    pad_h = max(0, backend.min_size - a.shape[0])
    pad_w = max(0, backend.min_size - a.shape[1])
    if pad_h or pad_w:
        spec = ((0, pad_h), (0, pad_w)) + ((0, 0),) * (a.ndim - 2)
        mode = "reflect" if min(a.shape[:2]) > 1 else "edge"
        a, b = np.pad(a, spec, mode=mode), np.pad(b, spec, mode=mode)
    try:
        fa, fb = backend.features(a), backend.features(b)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"perceptual backend failed: {exc}") from exc
    total = 0.0
    for xa, xb, w in zip(fa, fb, backend.weights):
        if xa.shape != xb.shape or xa.shape[1] == 0 or xa.shape[2] == 0:
            raise BackendError(f"backend produced unusable features {xa.shape}")
        d = (_unit_normalize(xa) - _unit_normalize(xb)) ** 2
        total += float(np.mean(np.tensordot(np.asarray(w, dtype=float), d, axes=(0, 0))))
    return total


# --- recognition metrics ----------------------------------------------------


def edit_distance(p, g):
    """Levenshtein distance over Unicode code points."""
    if len(p) < len(g):
        p, g = g, p
    prev = list(range(len(g) + 1))
    for i, cp in enumerate(p, 1):
        cur = [i] + [0] * len(g)
        for j, cg in enumerate(g, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (cp != cg))
        prev = cur
    return prev[-1]


def ned(p, g):
    """``1 - ED / max(len)``; two empty strings score 1.0."""
    n = max(len(p), len(g))
    if n == 0:
        return 1.0
    return 1.0 - edit_distance(p, g) / n


def _is_latin(ch):
    return "LATIN" in unicodedata.name(ch, "")


def normalize_transcript(s):
    """NFKC (folds full-width forms), lower-case Latin letters, trim whitespace."""
    s = unicodedata.normalize("NFKC", s)
    s = "".join(ch.lower() if _is_latin(ch) else ch for ch in s)
    return s.strip()


def word_accuracy(pairs):
    """Fraction of (prediction, ground truth) pairs equal after normalization."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("word_accuracy needs at least one pair")
    hits = sum(normalize_transcript(p) == normalize_transcript(g) for p, g in pairs)
    return hits / len(pairs)


# --- reports ------------------------------------------------------------------

METRIC_NAMES = ("psnr", "ssim", "lpips", "acc", "ned")


@dataclass(frozen=True)
class LineResult:
    line_id: str
    language: str
    psnr: float
    ssim: float
    lpips: Optional[float]
    exact_match: Optional[bool]  # None for illegible lines
    ned: Optional[float]
    prediction: str = ""
    transcript: str = ""

    def to_dict(self):
        return {
            "line_id": self.line_id,
            "language": self.language,
            "psnr": _encode(self.psnr),
            "ssim": self.ssim,
            "lpips": self.lpips,
            "exact_match": self.exact_match,
            "ned": self.ned,
            "prediction": self.prediction,
            "transcript": self.transcript,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "psnr": _decode(d["psnr"])})


def _encode(x):
    return "inf" if x == math.inf else x


def _decode(x):
    return math.inf if x == "inf" else x


def _mean(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    # fsum is correctly rounded, so the mean does not depend on row order
    return math.fsum(vals) / len(vals)


@dataclass
class MetricReport:
    """Per-line rows plus arithmetic-mean aggregates.

    PSNR rows equal to ``math.inf`` (perfect reconstruction) make the mean
    infinite. ACC and NED ignore illegible lines.
    """

    per_line: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    name: str = ""

    @property
    def aggregate(self):
        rows = self.per_line
        return {
            "psnr": _mean(r.psnr for r in rows),
            "ssim": _mean(r.ssim for r in rows),
            "lpips": _mean(r.lpips for r in rows),
            "acc": _mean(None if r.exact_match is None else float(r.exact_match) for r in rows),
            "ned": _mean(r.ned for r in rows),
        }

    @property
    def counts(self):
        out = {}
        for r in self.per_line:
            out[r.language] = out.get(r.language, 0) + 1
        return dict(sorted(out.items()))

    def to_dict(self):
        return {
            "name": self.name,
            "aggregate": {k: _encode(v) for k, v in self.aggregate.items()},
            "counts": self.counts,
            "failures": list(self.failures),
            "per_line": [r.to_dict() for r in self.per_line],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            per_line=[LineResult.from_dict(r) for r in d["per_line"]],
            failures=list(d.get("failures", [])),
            name=d.get("name", ""),
        )
