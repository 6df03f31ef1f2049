"""LR/HR pair preparation: registration, central cropping, synthetic fixtures.

The registration here is a compact stand-in for a full camera-pair
alignment pipeline: per-channel gain/bias plus one global affine warp,
estimated by alternating least squares and coarse-to-fine damped
Gauss-Newton descent on the photometric L2 error.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import DEFAULT_FOCALS, RegionPair, RegistrationTransform, TextLine
from .imageops import bicubic_downsample, resize

PYRAMID_LEVELS = 3
MAX_ROUNDS = 20
ROUND_TOL = 1e-4
MAX_RESIDUAL = 0.05


def _channels(img):
    return img[..., None] if img.ndim == 2 else img


class _Level:
    """One pyramid level: moving image (spline coefficients + gradients) and target."""

    def __init__(self, moving, target, mask, factor, center0):
        self.factor = factor
        self.target = target
        self.mask = mask
        n = moving.shape[2]
        self.coeffs = [ndimage.spline_filter(moving[..., c], order=3) for c in range(n)]
        self.grad_rows = [np.gradient(moving[..., c], axis=0) for c in range(n)]
        self.grad_cols = [np.gradient(moving[..., c], axis=1) for c in range(n)]
        h, w = target.shape[:2]
        o = (factor - 1) / 2.0
        self.center = ((center0[0] - o) / factor, (center0[1] - o) / factor)
        rows, cols = np.nonzero(mask)
        self.rows, self.cols = rows.astype(float), cols.astype(float)
        self.dy, self.dx = self.rows - self.center[0], self.cols - self.center[1]
        self.tgt = target[rows, cols]  # (K, C)

    def warp_points(self, m, t):
        # centered coordinates: x' - c = M (x - c) + t / factor
        tx, ty = t[0] / self.factor, t[1] / self.factor
        wx = m[0, 0] * self.dx + m[0, 1] * self.dy + tx + self.center[1]
        wy = m[1, 0] * self.dx + m[1, 1] * self.dy + ty + self.center[0]
        return wy, wx

    def sample(self, m, t, with_grad=False):
        wy, wx = self.warp_points(m, t)
        coords = np.vstack([wy, wx])
        vals = np.stack(
            [ndimage.map_coordinates(c, coords, order=3, mode="nearest", prefilter=False) for c in self.coeffs],
            axis=1,
        )
        if not with_grad:
            return vals
        gy = np.stack([ndimage.map_coordinates(g, coords, order=1, mode="nearest") for g in self.grad_rows], axis=1)
        gx = np.stack([ndimage.map_coordinates(g, coords, order=1, mode="nearest") for g in self.grad_cols], axis=1)
        return vals, gy, gx

    def mse(self, m, t, gain, bias):
        r = gain * self.sample(m, t) + bias - self.tgt
        return float(np.mean(r * r))


def _pyramid_image(img, factor):
    if factor == 1:
        return img
    h, w = img.shape[:2]
    return resize(img, max(1, round(h / factor)), max(1, round(w / factor)))


def _interior_mask(shape, margin):
    mask = np.zeros(shape, dtype=bool)
    mask[margin : shape[0] - margin, margin : shape[1] - margin] = True
    return mask


def _refine_affine(level, m, t, gain, bias, iters=30):
    """Levenberg-Marquardt on (M, t) at one level; only accepts descending steps."""
    cur = level.mse(m, t, gain, bias)
    lam = 1e-3
    for _ in range(iters):
        vals, gy, gx = level.sample(m, t, with_grad=True)
        r = (gain * vals + bias - level.tgt).ravel()
        dx, dy = level.dx[:, None], level.dy[:, None]
        gx_, gy_ = gain * gx, gain * gy
        # parameter order: m00, m01, tx, m10, m11, ty (t in level-0 pixels)
        cols = [gx_ * dx, gx_ * dy, gx_ / level.factor, gy_ * dx, gy_ * dy, gy_ / level.factor]
        jac = np.stack([c.ravel() for c in cols], axis=1)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        improved = False
        for _ in range(8):
            a = jtj + lam * np.diag(np.diag(jtj) + 1e-12)
            try:
                step = -np.linalg.solve(a, jtr)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            m_new = m + np.array([[step[0], step[1]], [step[3], step[4]]])
            t_new = t + np.array([step[2], step[5]])
            new = level.mse(m_new, t_new, gain, bias)
            if new < cur:
                m, t, cur = m_new, t_new, new
                lam = max(lam / 3, 1e-7)
                improved = True
                break
            lam *= 10
        if not improved or np.max(np.abs(step)) < 1e-6:
            break
    return m, t, cur


def _fit_gain_bias(level, m, t):
    vals = level.sample(m, t)
    gains, biases = [], []
    for c in range(vals.shape[1]):
        x, y = vals[:, c], level.tgt[:, c]
        var = np.var(x)
        g = np.cov(x, y, bias=True)[0, 1] / var if var > 1e-12 else 1.0
        gains.append(g)
        biases.append(y.mean() - g * x.mean())
    return np.array(gains), np.array(biases)


def _to_affine(m, t, center):
    cy, cx = center
    c = np.array([cx, cy])
    offset = t + c - m @ c
    return np.hstack([m, offset[:, None]])


def apply_registration(lr, transform, scale):
    """Resample and color-correct ``lr`` on its own grid according to ``transform``."""
    lr3 = _channels(np.asarray(lr, dtype=np.float64))
    h, w = lr3.shape[:2]
    a = transform.matrix
    v, u = np.mgrid[0:h, 0:w].astype(float)
    x = scale * (u + 0.5) - 0.5
    y = scale * (v + 0.5) - 0.5
    xw = a[0, 0] * x + a[0, 1] * y + a[0, 2]
    yw = a[1, 0] * x + a[1, 1] * y + a[1, 2]
    coords = np.stack([(yw + 0.5) / scale - 0.5, (xw + 0.5) / scale - 0.5])
    out = np.stack(
        [ndimage.map_coordinates(lr3[..., c], coords, order=3, mode="nearest") for c in range(lr3.shape[2])],
        axis=2,
    )
    out = out * np.asarray(transform.gain) + np.asarray(transform.bias)
    out = np.clip(out, 0.0, 1.0)
    return out[..., 0] if np.ndim(lr) == 2 else out


def register_pair(lr, hr, scale, max_rounds=MAX_ROUNDS, tol=ROUND_TOL, max_residual=MAX_RESIDUAL, margin=None, smooth=1.0):
    """Align ``lr`` to ``hr``; returns (registered RegionPair, RegistrationTransform).

    The transform maps HR pixel coordinates to positions in the bicubic
    upsampled LR image. ``history`` records the photometric MSE after each
    gain/bias fit and each affine refinement; it never increases. Pairs whose
    final mean absolute residual exceeds ``max_residual`` are returned with
    ``flagged=True``.
    """
    lr = np.asarray(lr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if scale not in (2, 4):
        raise ValueError("scale must be 2 or 4")
    if hr.shape[0] < scale * lr.shape[0] - 1 or hr.shape[1] < scale * lr.shape[1] - 1:
        raise ValueError("hr must be about scale times larger than lr")
    lr3, hr3 = _channels(lr), _channels(hr)
    if lr3.shape[2] != hr3.shape[2]:
        raise ValueError("lr and hr have different channel counts")
    h, w = hr3.shape[:2]
    up = resize(lr3, h, w)
    # compare at LR bandwidth: the target is HR passed through the same down/up path
    lh, lw = lr3.shape[:2]
    target = resize(resize(hr3, lh, lw), h, w)
    if margin is None:
        margin = max(4, int(0.1 * min(h, w)))
    mask0 = _interior_mask((h, w), margin)
    center0 = ((h - 1) / 2.0, (w - 1) / 2.0)
    # the residual is judged on unsmoothed images so smoothing cannot hide a bad fit
    judge = _Level(up, target, mask0, 1, center0)
    if smooth:
        # suppress phase-dependent aliasing from the LR sampling grid
        sig = (smooth * scale, smooth * scale, 0)
        up = ndimage.gaussian_filter(up, sig, mode="nearest")
        target = ndimage.gaussian_filter(target, sig, mode="nearest")

    levels = []
    for k in reversed(range(PYRAMID_LEVELS)):
        f = 2**k
        if min(h, w) / f < 16:
            continue
        tgt = _pyramid_image(target, f)
        mov = _pyramid_image(up, f)
        mk = _interior_mask(tgt.shape[:2], max(2, int(math.ceil(margin / f))))
        levels.append(_Level(mov, tgt, mk, f, center0))
    full = _Level(up, target, mask0, 1, center0) if levels[-1].factor != 1 else levels[-1]

    m, t = np.eye(2), np.zeros(2)
    n = hr3.shape[2]
    gain, bias = np.ones(n), np.zeros(n)
    history = [full.mse(m, t, gain, bias)]
    prev_round = history[0]
    for _ in range(max_rounds):
        g_new, b_new = _fit_gain_bias(full, m, t)
        cand = full.mse(m, t, g_new, b_new)
        if cand <= history[-1]:
            gain, bias = g_new, b_new
        history.append(min(cand, history[-1]))
        m_new, t_new = m, t
        for level in levels:
            m_new, t_new, _ = _refine_affine(level, m_new, t_new, gain, bias)
        cand = full.mse(m_new, t_new, gain, bias)
        if cand <= history[-1]:
            m, t = m_new, t_new
        history.append(min(cand, history[-1]))
        if prev_round - history[-1] < tol * max(prev_round, 1e-12) and len(history) > 3:
            break
        prev_round = history[-1]

    resid = gain * judge.sample(m, t) + bias - judge.tgt
    mae = float(np.mean(np.abs(resid)))
    transform = RegistrationTransform(
        affine=tuple(map(tuple, _to_affine(m, t, center0))),
        gain=tuple(float(g) for g in gain),
        bias=tuple(float(b) for b in bias),
        residual=mae,
        history=tuple(history),
        flagged=mae > max_residual,
    )
    registered = apply_registration(lr, transform, scale)
    pair = RegionPair(lr=registered, hr=hr, scale=scale, registration=transform)
    return pair, transform


def write_exceptions(ids, path):
    """Plain-text list of flagged pair ids, one per line."""
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def central_crop_window(pair, crop_fraction):
    """HR window ``(y0, x0, height, width)`` of :func:`central_crop_pair`."""
    if not 0 < crop_fraction <= 1:
        raise ValueError("crop_fraction must lie in (0, 1]")
    s = pair.scale
    lh, lw = pair.lr.shape[:2]
    hh, hw = min(pair.hr.shape[0], s * lh), min(pair.hr.shape[1], s * lw)

    def window(n_hr):
        size = int(math.floor(crop_fraction * n_hr / s)) * s
        start = ((n_hr - size) // 2 // s) * s
        return start, size

    y0, ch = window(hh)
    x0, cw = window(hw)
    if ch // s < 16 or cw // s < 16:
        raise ValueError(f"crop is {ch // s}x{cw // s} in LR space; minimum is 16x16")
    return y0, x0, ch, cw


def central_crop_pair(pair, crop_fraction):
    """Concentric central crop; the HR window is snapped to multiples of scale."""
    s = pair.scale
    y0, x0, ch, cw = central_crop_window(pair, crop_fraction)
    hr = pair.hr[y0 : y0 + ch, x0 : x0 + cw]
    lr = pair.lr[y0 // s : (y0 + ch) // s, x0 // s : (x0 + cw) // s]
    return RegionPair(
        lr=lr.copy(),
        hr=hr.copy(),
        scale=s,
        lr_focal_mm=pair.lr_focal_mm,
        hr_focal_mm=pair.hr_focal_mm,
        registration=pair.registration,
    )


def synth_degrade(hr, scale, blur_sigma=0.0, noise_sigma=0.0, seed=0):
    """Gaussian blur, bicubic downsample, seeded Gaussian noise, clamp."""
    hr = np.asarray(hr, dtype=np.float64)
    if scale not in (2, 4):
        raise ValueError("scale must be 2 or 4")
    if hr.shape[0] % scale or hr.shape[1] % scale:
        raise ValueError(f"hr size {hr.shape[:2]} is not divisible by {scale}")
    img = hr
    if blur_sigma > 0:
        sig = (blur_sigma, blur_sigma) + (0,) * (hr.ndim - 2)
        img = ndimage.gaussian_filter(img, sigma=sig, mode="reflect")
    lr = bicubic_downsample(img, scale)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        lr = lr + rng.normal(0.0, noise_sigma, size=lr.shape)
    lr = np.clip(lr, 0.0, 1.0)
    lr_f, hr_f = DEFAULT_FOCALS[scale]
    return RegionPair(
        lr=lr,
        hr=np.clip(hr, 0, 1),
        scale=scale,
        lr_focal_mm=lr_f,
        hr_focal_mm=hr_f,
        registration=RegistrationTransform.identity(1 if hr.ndim == 2 else hr.shape[2]),
    )


# --- procedural glyph fixtures ------------------------------------------------


def textured_background(h, w, rng, channels=3):
    noise = rng.random((h, w, channels))
    smooth = ndimage.gaussian_filter(noise, sigma=(4, 4, 0))
    smooth = (smooth - smooth.min()) / max(smooth.max() - smooth.min(), 1e-9)
    base = rng.uniform(0.55, 0.85, size=channels)
    return np.clip(base + 0.15 * (smooth - 0.5), 0, 1)


def draw_glyph(canvas, box, color, rng, strokes=None, width=None):
    """Draw random horizontal/vertical/diagonal strokes inside ``box`` (x0, y0, x1, y1)."""
    x0, y0, x1, y1 = box
    bw, bh = x1 - x0, y1 - y0
    strokes = strokes or int(rng.integers(2, 5))
    width = width or max(1, int(round(min(bw, bh) * rng.uniform(0.08, 0.14))))
    yy, xx = np.mgrid[y0:y1, x0:x1]
    for _ in range(strokes):
        kind = rng.integers(0, 3)
        if kind == 0:
            yc = rng.uniform(y0 + width, y1 - width)
            xa, xb = sorted(rng.uniform(x0, x1, 2))
            sel = (np.abs(yy - yc) <= width / 2) & (xx >= xa) & (xx <= xb)
        elif kind == 1:
            xc = rng.uniform(x0 + width, x1 - width)
            ya, yb = sorted(rng.uniform(y0, y1, 2))
            sel = (np.abs(xx - xc) <= width / 2) & (yy >= ya) & (yy <= yb)
        else:
            pa = rng.uniform([x0, y0], [x1, y1])
            pb = rng.uniform([x0, y0], [x1, y1])
            d = pb - pa
            length = max(np.hypot(*d), 1e-6)
            s = np.clip(((xx - pa[0]) * d[0] + (yy - pa[1]) * d[1]) / length**2, 0, 1)
            dist = np.hypot(xx - (pa[0] + s * d[0]), yy - (pa[1] + s * d[1]))
            sel = dist <= width / 2
        canvas[y0:y1, x0:x1][sel] = color


def synthetic_region(h, w, rng, n_lines=2, chars_per_line=4):
    """HR image with glyph-like text lines and their annotations.

    Returns (image, lines) with lines as :class:`TextLine` in HR coordinates.
    Transcripts are random strings of letters so recognizer adapters have
    something to match.
    """
    img = textured_background(h, w, rng)
    lines = []
    line_h = max(12, h // (n_lines + 1))
    gap = (h - n_lines * line_h) // (n_lines + 1)
    alphabet = "ABCDEFGHJKLMNPRSTUVWXYZ"
    for i in range(n_lines):
        y0 = gap + i * (line_h + gap)
        y1 = y0 + line_h
        char_w = line_h
        n_chars = max(1, min(chars_per_line, (w - 8) // char_w))
        x0 = (w - n_chars * char_w) // 2
        dark = rng.random() < 0.5
        color = rng.uniform(0.0, 0.2, 3) if dark else rng.uniform(0.9, 1.0, 3)
        if not dark:
            img[y0:y1, x0 : x0 + n_chars * char_w] *= 0.4
        for k in range(n_chars):
            cx0 = x0 + k * char_w
            pad = max(1, char_w // 8)
            draw_glyph(img, (cx0 + pad, y0 + pad, cx0 + char_w - pad, y1 - pad), color, rng)
        text = "".join(rng.choice(list(alphabet), n_chars))
        x1 = x0 + n_chars * char_w
        quad = ((x0, y0), (x1, y0), (x1, y1), (x0, y1))
        lines.append(TextLine(quad=tuple(tuple(map(int, p)) for p in quad), transcript=text, language="en"))
    return np.clip(img, 0, 1), lines


def glyph_image(size, rng):
    """Square HR patch filled with glyph strokes on a textured background."""
    img = textured_background(size, size, rng)
    n = 2
    cell = size // n
    for i in range(n):
        for j in range(n):
            color = rng.uniform(0.0, 0.25, 3)
            pad = max(1, cell // 8)
            draw_glyph(img, (j * cell + pad, i * cell + pad, (j + 1) * cell - pad, (i + 1) * cell - pad), color, rng)
    return np.clip(img, 0, 1)


def glyph_dataset(n, scale, hr_size=64, blur_sigma=1.0, noise_sigma=0.01, seed=0):
    """``n`` synthetic glyph RegionPairs degraded with :func:`synth_degrade`."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        hr = glyph_image(hr_size, rng)
        pairs.append(synth_degrade(hr, scale, blur_sigma=blur_sigma, noise_sigma=noise_sigma, seed=seed * 100003 + i))
    return pairs
