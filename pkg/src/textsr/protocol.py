"""Benchmark evaluation: run an SR model, crop text lines, recognize, score.

Region mode feeds each full LR region to the model and crops lines from the
HR output at their annotated quads. Line mode crops LR lines first, resizes
them to the model's fixed input size and compares against equally resized
ground-truth crops.
"""

from __future__ import annotations

import hashlib
import importlib
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from scipy import ndimage

from .dataset import quad_to_lr
from .imageops import load_png, resize
from .metrics import (
    METRIC_NAMES,
    LineResult,
    MetricReport,
    RandomConvBackend,
    lpips,
    ned,
    normalize_transcript,
    psnr,
    ssim,
)

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.10
SSIM_WINDOW = 11


class EvaluationAborted(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class SRModelAdapter(Protocol):
    mode: str  # "region" or "line"
    scale: int
    concurrency_safe: bool

    def __call__(self, lr: np.ndarray) -> tuple: ...


class RecognizerAdapter(Protocol):
    languages: tuple
    concurrency_safe: bool

    def __call__(self, line: np.ndarray) -> str: ...


@dataclass
class ProtocolConfig:
    mode: str = "region"
    line_target_height: int = 32
    crop_mode: str = "rectified"
    line_input_size: tuple = (16, 64)  # LR (height, width) for line-mode models
    metrics: frozenset = frozenset(METRIC_NAMES)
    lpips_backend: object = field(default_factory=RandomConvBackend)

    def __post_init__(self):
        if self.mode not in ("region", "line"):
            raise ValueError("mode must be 'region' or 'line'")
        if self.line_target_height <= 0:
            raise ValueError("line_target_height must be positive")
        if self.crop_mode not in ("rectified", "axis-aligned"):
            raise ValueError("crop_mode must be 'rectified' or 'axis-aligned'")


# --- built-in adapters --------------------------------------------------------


class BicubicAdapter:
    concurrency_safe = True

    def __init__(self, scale, mode="region"):
        self.scale, self.mode = scale, mode

    def __call__(self, lr):
        h, w = lr.shape[:2]
        return np.clip(resize(lr, h * self.scale, w * self.scale), 0.0, 1.0), None


def _digest(img):
    return hashlib.sha1(np.ascontiguousarray(img, dtype=np.float64).tobytes()).hexdigest()


class GroundTruthAdapter:
    """Returns the ground-truth HR image of a known LR input (reconstruction ceiling)."""

    concurrency_safe = True
    mode = "region"

    def __init__(self, manifest):
        self.scale = manifest.entries[0].scale if manifest.entries else 2
        self._table = {}
        for e in manifest.entries:
            pair = manifest.load_pair(e)
            self._table[_digest(pair.lr)] = pair.hr

    def __call__(self, lr):
        try:
            return self._table[_digest(lr)].copy(), None
        except KeyError:
            raise LookupError("unknown LR input") from None


class PrecomputedAdapter:
    """Serves predictions stored as ``<pred_dir>/<entry id>.png``."""

    concurrency_safe = True
    mode = "region"

    def __init__(self, pred_dir, manifest):
        self.scale = manifest.entries[0].scale if manifest.entries else 2
        self._paths = {}
        for e in manifest.entries:
            lr = manifest.load_pair(e).lr
            self._paths[_digest(lr)] = Path(pred_dir) / f"{e.id}.png"

    def __call__(self, lr):
        path = self._paths.get(_digest(lr))
        if path is None or not path.is_file():
            raise FileNotFoundError(f"no prediction for this input ({path})")
        return load_png(path), None


class NullRecognizer:
    languages = ("zh", "en", "mixed")
    concurrency_safe = True

    def __call__(self, line):
        return ""


class TemplateRecognizer:
    """Nearest-template recognizer over known ground-truth line crops.

    Deterministic and dependency-free; meant for tests and demos, where it
    returns the transcript of the closest stored crop (after resizing both to
    a fixed 16x64 grayscale thumbnail) or ``""`` if nothing is close.
    """

    languages = ("zh", "en", "mixed")
    concurrency_safe = True
    thumb = (16, 64)

    def __init__(self, manifest, max_distance=0.02, crop_mode="rectified"):
        self.max_distance = max_distance
        self._thumbs, self._texts = [], []
        for e in manifest.entries:
            hr = manifest.load_pair(e).hr
            for line in e.lines:
                crop = crop_text_line(hr, line.quad, crop_mode)
                self._thumbs.append(self._thumb(crop))
                self._texts.append(line.transcript)
        self._stack = np.stack(self._thumbs) if self._thumbs else np.zeros((0,) + self.thumb)

    def _thumb(self, img):
        g = img.mean(axis=2) if img.ndim == 3 else img
        return resize(g, *self.thumb, kernel="linear")

    def __call__(self, line):
        if not len(self._stack):
            return ""
        d = np.mean((self._stack - self._thumb(line)) ** 2, axis=(1, 2))
        k = int(np.argmin(d))
        return self._texts[k] if d[k] <= self.max_distance else ""


def _import_object(path):
    module, _, attr = path.partition(":")
    obj = importlib.import_module(module)
    for part in attr.split(".") if attr else ():
        obj = getattr(obj, part)
    return obj


def _toy_model(path, scale, mode, manifest):
    from .trainer import load_checkpoint

    return load_checkpoint(path)


MODEL_REGISTRY = {
    "bicubic": lambda path, scale, mode, manifest: BicubicAdapter(scale, mode),
    "gt": lambda path, scale, mode, manifest: GroundTruthAdapter(manifest),
    "preds": lambda path, scale, mode, manifest: PrecomputedAdapter(path, manifest),
    "toy": _toy_model,
    "py": lambda path, scale, mode, manifest: _import_object(path)(scale=scale, mode=mode),
}

RECOGNIZER_REGISTRY = {
    "null": lambda path, manifest: NullRecognizer(),
    "template": lambda path, manifest: TemplateRecognizer(manifest),
    "py": lambda path, manifest: _import_object(path)(),
}


def _split_spec(spec):
    name, _, path = spec.partition(":")
    return name, (path or None)


def resolve_model(spec, scale, mode, manifest):
    """Build a model adapter from ``name`` or ``name:path``."""
    name, path = _split_spec(spec)
    if name not in MODEL_REGISTRY:
        raise KeyError(f"unknown model adapter {name!r}; known: {sorted(MODEL_REGISTRY)}")
    return MODEL_REGISTRY[name](path, scale, mode, manifest)


def resolve_recognizer(spec, manifest):
    name, path = _split_spec(spec)
    if name not in RECOGNIZER_REGISTRY:
        raise KeyError(f"unknown recognizer {name!r}; known: {sorted(RECOGNIZER_REGISTRY)}")
    return RECOGNIZER_REGISTRY[name](path, manifest)


# --- cropping -----------------------------------------------------------------


def _homography(src, dst):
    """3x3 H with dst ~ H @ src for four point correspondences."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs += [u, v]
    h = np.linalg.solve(np.array(rows, dtype=float), np.array(rhs, dtype=float))
    return np.append(h, 1.0).reshape(3, 3)


def _check_quad(quad, shape):
    q = np.asarray(quad, dtype=float)
    if q.shape != (4, 2):
        raise ValueError("quad must have 4 (x, y) points")
    x, y = q[:, 0], q[:, 1]
    area = 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    if area < 4:
        raise ValueError(f"degenerate quad (area {area:.2f} px^2)")
    scale = max(np.ptp(x), np.ptp(y), 1.0)
    for i in range(4):
        a, b, c = q[i], q[(i + 1) % 4], q[(i + 2) % 4]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(cross) < 1e-6 * scale * scale:
            raise ValueError("degenerate quad (three collinear corners)")
    h, w = shape[:2]
    if x.min() < -1e-6 or y.min() < -1e-6 or x.max() > w + 1e-6 or y.max() > h + 1e-6:
        raise ValueError(f"quad lies outside the {h}x{w} image")
    return q


def rectified_size(quad):
    q = np.asarray(quad, dtype=float)
    top = np.linalg.norm(q[1] - q[0])
    bottom = np.linalg.norm(q[2] - q[3])
    left = np.linalg.norm(q[3] - q[0])
    right = np.linalg.norm(q[2] - q[1])
    return max(1, int(round((left + right) / 2))), max(1, int(round((top + bottom) / 2)))


def crop_text_line(img, quad, mode="rectified"):
    """Crop a text line given its quad (pixel-edge coordinates, clockwise from top-left).

    ``axis-aligned`` slices the bounding rectangle. ``rectified`` warps the
    quad onto a rectangle whose height/width are the mean side lengths,
    sampling bilinearly at pixel centers.
    """
    img = np.asarray(img, dtype=np.float64)
    q = _check_quad(quad, img.shape)
    if mode == "axis-aligned":
        x0, y0 = int(np.floor(q[:, 0].min() + 1e-9)), int(np.floor(q[:, 1].min() + 1e-9))
        x1, y1 = int(np.ceil(q[:, 0].max() - 1e-9)), int(np.ceil(q[:, 1].max() - 1e-9))
        return img[y0:y1, x0:x1].copy()
    if mode != "rectified":
        raise ValueError(f"unknown crop mode {mode!r}")
    out_h, out_w = rectified_size(q)
    rect = [(0, 0), (out_w, 0), (out_w, out_h), (0, out_h)]
    hmat = _homography(rect, q)
    v, u = np.mgrid[0:out_h, 0:out_w].astype(float)
    pts = hmat @ np.stack([u.ravel() + 0.5, v.ravel() + 0.5, np.ones(u.size)])
    xs, ys = pts[0] / pts[2] - 0.5, pts[1] / pts[2] - 0.5
    # snap round-off so grid-aligned quads reproduce the source pixels exactly
    for arr in (xs, ys):
        near = np.abs(arr - np.round(arr)) < 1e-7
        arr[near] = np.round(arr[near])
    chans = img[..., None] if img.ndim == 2 else img
    out = np.stack(
        [
            ndimage.map_coordinates(chans[..., c], [ys, xs], order=1, mode="nearest").reshape(out_h, out_w)
            for c in range(chans.shape[2])
        ],
        axis=2,
    )
    return out[..., 0] if img.ndim == 2 else out


def recognizer_input(line, target_height):
    """Resize a line crop to ``target_height`` keeping its aspect ratio (bilinear)."""
    h, w = line.shape[:2]
    new_w = max(1, int(round(w * target_height / h)))
    return np.clip(resize(line, target_height, new_w, kernel="linear"), 0.0, 1.0)


def _pad_to(img, min_size):
    ph, pw = max(0, min_size - img.shape[0]), max(0, min_size - img.shape[1])
    if not (ph or pw):
        return img
    spec = ((0, ph), (0, pw)) + ((0, 0),) * (img.ndim - 2)
    return np.pad(img, spec, mode="reflect" if min(img.shape[:2]) > 1 else "edge")


def _fit_to(img, shape):
    """Crop or edge-pad a prediction to the ground-truth spatial size."""
    h, w = shape[:2]
    img = img[:h, :w]
    ph, pw = h - img.shape[0], w - img.shape[1]
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)) + ((0, 0),) * (img.ndim - 2), mode="edge")
    return img


def score_line(pred, gt, line, line_id, recognizer, cfg, lock=None):
    """Metrics for one predicted line crop against its ground-truth crop."""
    metrics = cfg.metrics
    p_val = psnr(pred, gt) if "psnr" in metrics else None
    s_val = None
    if "ssim" in metrics:
        s_val = ssim(_pad_to(pred, SSIM_WINDOW), _pad_to(gt, SSIM_WINDOW))
    l_val = lpips(pred, gt, cfg.lpips_backend) if "lpips" in metrics else None
    match, n_val, prediction = None, None, ""
    if not line.illegible and ({"acc", "ned"} & set(metrics)):
        with lock or nullcontext():
            prediction = recognizer(recognizer_input(pred, cfg.line_target_height))
        p_norm, g_norm = normalize_transcript(prediction), normalize_transcript(line.transcript)
        if "acc" in metrics:
            match = p_norm == g_norm
        if "ned" in metrics:
            n_val = ned(p_norm, g_norm)
    return LineResult(
        line_id=line_id,
        language=line.language,
        psnr=p_val,
        ssim=s_val,
        lpips=l_val,
        exact_match=match,
        ned=n_val,
        prediction=prediction,
        transcript=line.transcript,
    )


class _Locks:
    def __init__(self, model, recognizer, backend):
        self.model = None if getattr(model, "concurrency_safe", False) else threading.Lock()
        self.recognizer = None if getattr(recognizer, "concurrency_safe", False) else threading.Lock()
        self.backend = None if getattr(backend, "concurrency_safe", False) else threading.Lock()


def _run_model(model, lr, lock):
    with lock or nullcontext():
        out = model(lr)
    hr = out[0] if isinstance(out, tuple) else out
    return np.clip(np.asarray(hr, dtype=np.float64), 0.0, 1.0)


def _evaluate_entry(manifest, entry, model, recognizer, cfg, locks):
    pair = manifest.load_pair(entry)
    rows = []
    if cfg.mode == "region":
        pred = _fit_to(_run_model(model, pair.lr, locks.model), pair.hr.shape)
        for j, line in enumerate(entry.lines):
            p_crop = crop_text_line(pred, line.quad, cfg.crop_mode)
            g_crop = crop_text_line(pair.hr, line.quad, cfg.crop_mode)
            rows.append(_score(p_crop, g_crop, line, f"{entry.id}:{j}", recognizer, cfg, locks))
    else:
        ih, iw = cfg.line_input_size
        s = entry.scale
        for j, line in enumerate(entry.lines):
            lr_crop = crop_text_line(pair.lr, quad_to_lr(line.quad, s), cfg.crop_mode)
            lr_in = np.clip(resize(lr_crop, ih, iw), 0.0, 1.0)
            pred = _fit_to(_run_model(model, lr_in, locks.model), (s * ih, s * iw))
            g_crop = crop_text_line(pair.hr, line.quad, cfg.crop_mode)
            gt = np.clip(resize(g_crop, s * ih, s * iw), 0.0, 1.0)
            rows.append(_score(pred, gt, line, f"{entry.id}:{j}", recognizer, cfg, locks))
    return rows


def _score(pred, gt, line, line_id, recognizer, cfg, locks):
    with locks.backend or nullcontext():
        return score_line(pred, gt, line, line_id, recognizer, cfg, locks.recognizer)


def evaluate(manifest, model, recognizer, cfg=None, jobs=1, name=""):
    """Score ``model`` on every annotated line of ``manifest``.

    Entries whose model or recognizer call raises are skipped and listed in
    ``report.failures``; more than 10% failures raises
    :class:`EvaluationAborted`. Rows are sorted by line id, so the report
    does not depend on entry order or completion order.
    """
    cfg = cfg or ProtocolConfig()
    if getattr(model, "mode", cfg.mode) != cfg.mode:
        raise ValueError(f"model runs in {model.mode!r} mode but protocol is {cfg.mode!r}")
    scales = {e.scale for e in manifest.entries}
    if scales and scales != {model.scale}:
        raise ValueError(f"model scale {model.scale} does not match manifest scales {sorted(scales)}")
    locks = _Locks(model, recognizer, cfg.lpips_backend)

    def work(entry):
        try:
            return entry, _evaluate_entry(manifest, entry, model, recognizer, cfg, locks), None
        except Exception as exc:  # adapter failures are recorded, not fatal
            return entry, [], f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, manifest.entries))
    else:
        results = [work(e) for e in manifest.entries]

    rows, failures = [], []
    for entry, entry_rows, err in results:
        if err is not None:
            log.warning("entry %s skipped: %s", entry.id, err)
            failures.append({"entry": entry.id, "error": err})
        rows.extend(entry_rows)
    rows.sort(key=lambda r: _line_key(r.line_id))
    report = MetricReport(per_line=rows, failures=failures, name=name)
    n = len(manifest.entries)
    if n and len(failures) / n > MAX_FAILURE_RATE:
        raise EvaluationAborted(f"{len(failures)} of {n} entries failed", report)
    return report


def _line_key(line_id):
    entry, _, idx = line_id.rpartition(":")
    return entry, int(idx)


def recognize_ground_truth(manifest, recognizer, cfg=None):
    """Recognition-only report on ground-truth HR crops (the recognizer ceiling)."""
    cfg = cfg or ProtocolConfig()
    only_text = ProtocolConfig(
        mode=cfg.mode,
        line_target_height=cfg.line_target_height,
        crop_mode=cfg.crop_mode,
        metrics=frozenset({"acc", "ned"}),
        lpips_backend=cfg.lpips_backend,
    )
    rows = []
    for e in manifest.entries:
        hr = manifest.load_pair(e).hr
        for j, line in enumerate(e.lines):
            crop = crop_text_line(hr, line.quad, cfg.crop_mode)
            rows.append(score_line(crop, crop, line, f"{e.id}:{j}", recognizer, only_text))
    rows.sort(key=lambda r: _line_key(r.line_id))
    return MetricReport(per_line=rows, name="HR")


def aggregate_by_language(report):
    """Split a report by language tag; languages without rows are omitted."""
    out = {}
    for row in report.per_line:
        out.setdefault(row.language, []).append(row)
    return {
        lang: MetricReport(per_line=rows, name=f"{report.name}[{lang}]" if report.name else lang)
        for lang, rows in sorted(out.items())
    }
