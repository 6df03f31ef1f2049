"""Toy edge-aware SR network and its training loop.

The network is deliberately small so the full loss family can be trained
and ablated on a laptop CPU in minutes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .edge import CannyParams, canny
from .losses import LossTerms, LossWeights, build_extractor, l1_loss, total_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MIN_INPUT = 8


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class ToySRConfig:
    scale: int = 2
    base_channels: int = 32
    num_blocks: int = 4
    use_edge_input: bool = False
    predict_edge_head: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError("scale must be 2 or 4")
        if self.base_channels < 8:
            raise ValueError("base_channels must be >= 8")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")


@dataclass
class TrainConfig:
    step_size: float = 2e-4
    epochs: int = 50
    batch_size: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    objective: str = "edge-aware"  # or "l1"
    extractor: str = "tiny"
    patch_size: int = 32  # LR pixels
    max_steps: Optional[int] = None
    checkpoint_interval: int = 0
    seed: int = 0
    canny: CannyParams = field(default_factory=CannyParams)

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.objective not in ("edge-aware", "l1"):
            raise ValueError("objective must be 'edge-aware' or 'l1'")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.canny, dict):
            self.canny = CannyParams(**self.canny)


class _ResBlock(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.conv1 = nn.Conv2d(c, c, 3, padding=1)
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class ToySR(nn.Module):
    """Residual conv trunk, pixel-shuffle upsampler, RGB and edge heads.

    The RGB head predicts a residual on top of the bicubic-upsampled input.
    The edge head is a small conv branch reading the RGB estimate, so edge
    supervision acts on the reconstructed image rather than competing with
    the RGB head for trunk features.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.head = nn.Conv2d(4 if cfg.use_edge_input else 3, c, 3, padding=1)
        self.blocks = nn.Sequential(*[_ResBlock(c) for _ in range(cfg.num_blocks)])
        self.up = nn.Sequential(nn.Conv2d(c, c * cfg.scale**2, 3, padding=1), nn.PixelShuffle(cfg.scale), nn.ReLU())
        self.rgb = nn.Conv2d(c, 3, 3, padding=1)
        self.edge = (
            nn.Sequential(nn.Conv2d(3, c // 2, 3, padding=1), nn.ReLU(), nn.Conv2d(c // 2, 1, 3, padding=1))
            if cfg.predict_edge_head
            else None
        )

    def forward(self, x):
        rgb_in = x[:, :3]
        feat = F.relu(self.head(x))
        feat = feat + self.blocks(feat)
        feat = self.up(feat)
        base = F.interpolate(rgb_in, scale_factor=self.cfg.scale, mode="bicubic", align_corners=False)
        rgb = base + self.rgb(feat)
        edge = torch.sigmoid(self.edge(rgb)) if self.edge is not None else None
        return rgb, edge


class ToySRAdapter:
    """Numpy-facing wrapper implementing the SR model adapter contract."""

    mode = "region"
    concurrency_safe = False

    def __init__(self, net, canny_params=CannyParams()):
        self.net = net
        self.canny_params = canny_params

    @property
    def cfg(self):
        return self.net.cfg

    @property
    def scale(self):
        return self.net.cfg.scale

    def prepare(self, lr):
        """(3 or 4, H, W) float32 input tensor for an RGB LR image in [0, 1]."""
        lr = np.asarray(lr, dtype=np.float64)
        if lr.ndim == 2:
            lr = np.repeat(lr[..., None], 3, axis=2)
        chans = [lr[..., :3]]
        if self.cfg.use_edge_input:
            chans.append(canny(lr[..., :3], self.canny_params)[..., None].astype(np.float64))
        x = np.concatenate(chans, axis=2)
        return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1), dtype=np.float32))

    def __call__(self, lr):
        return infer(self, lr)


def build_toy_model(cfg):
    torch.manual_seed(cfg.seed)
    net = ToySR(cfg)
    return ToySRAdapter(net)


def parameter_checksum(model):
    net = model.net if isinstance(model, ToySRAdapter) else model
    h = hashlib.sha256()
    for name, p in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def infer(model, lr):
    """HR estimate clamped to [0, 1] and the raw edge-head output (or None)."""
    lr = np.asarray(lr, dtype=np.float64)
    if min(lr.shape[:2]) < MIN_INPUT:
        raise ValueError(f"input {lr.shape[:2]} is smaller than {MIN_INPUT}x{MIN_INPUT}")
    x = model.prepare(lr)[None]
    model.net.eval()
    with torch.no_grad():
        rgb, edge = model.net(x)
    hr = np.clip(rgb[0].numpy().transpose(1, 2, 0).astype(np.float64), 0.0, 1.0)
    edge_map = None if edge is None else edge[0, 0].numpy().astype(np.float64)
    return hr, edge_map


# --- training -----------------------------------------------------------------


class _Fixtures:
    """Tensors and cached Canny maps for a list of RegionPairs."""

    def __init__(self, model, pairs, canny_params):
        self.items = []
        for pair in pairs:
            if pair.scale != model.scale:
                raise ValueError(f"pair scale {pair.scale} does not match model scale {model.scale}")
            lr = pair.lr if pair.lr.ndim == 3 else np.repeat(pair.lr[..., None], 3, 2)
            hr = pair.hr if pair.hr.ndim == 3 else np.repeat(pair.hr[..., None], 3, 2)
            model_in = ToySRAdapter(model.net, canny_params).prepare(lr)
            hr_t = torch.from_numpy(np.ascontiguousarray(hr[..., :3].transpose(2, 0, 1), dtype=np.float32))
            c_h = torch.from_numpy(canny(hr[..., :3], canny_params).astype(np.float32))[None]
            self.items.append((model_in, hr_t, c_h))

    def batch(self, picks, scale, patch):
        xs, ys, cs = [], [], []
        for idx, top, left in picks:
            x, y, c = self.items[idx]
            xs.append(x[:, top : top + patch, left : left + patch])
            hy, hx, hp = top * scale, left * scale, patch * scale
            ys.append(y[:, hy : hy + hp, hx : hx + hp])
            cs.append(c[:, hy : hy + hp, hx : hx + hp])
        return torch.stack(xs), torch.stack(ys), torch.stack(cs)


def _schedule(n_items, sizes, tc, rng, patch):
    """Yield (epoch, picks) where picks are (index, top, left) LR patch origins."""
    for epoch in range(tc.epochs):
        order = rng.permutation(n_items)
        for start in range(0, n_items, tc.batch_size):
            picks = []
            for idx in order[start : start + tc.batch_size]:
                h, w = sizes[idx]
                top = int(rng.integers(0, h - patch + 1))
                left = int(rng.integers(0, w - patch + 1))
                picks.append((int(idx), top, left))
            yield epoch, picks


def compute_loss(model, batch, tc, extractor):
    x, y, c_h = batch
    rgb, edge = model.net(x)
    if tc.objective == "l1":
        l1 = l1_loss(rgb, y)
        zero = l1.new_zeros(())

        return LossTerms(l1, l1, zero, zero)
    if edge is None and (tc.weights.alpha or tc.weights.beta):
        raise ValueError("edge-aware losses need a model with an edge head")
    return total_loss(rgb, edge, y, c_h, tc.weights, extractor)


def train(model, dataset, tc=None, out_dir=None):
    """Minimize the configured objective with Adam; returns (model, history).

    ``history`` has one dict per step with the loss components evaluated
    before that step's update, plus the patch picks used. Checkpoints named
    ``step_<k>.npz`` hold the parameters after ``k`` updates.
    """
    tc = tc or TrainConfig()
    if not dataset:
        raise ValueError("empty training set")
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    fixtures = _Fixtures(model, dataset, tc.canny)
    sizes = [item[0].shape[1:] for item in fixtures.items]
    patch = min(tc.patch_size, min(min(s) for s in sizes))
    extractor = build_extractor(tc.extractor) if (tc.objective != "l1" and tc.weights.beta) else None
    opt = torch.optim.Adam(model.net.parameters(), lr=tc.step_size, betas=(0.9, 0.999), eps=1e-8)
    out_dir = Path(out_dir) if out_dir else None
    history = []
    model.net.train()
    for step, (epoch, picks) in enumerate(_schedule(len(dataset), sizes, tc, rng, patch)):
        if tc.max_steps is not None and step >= tc.max_steps:
            break
        if out_dir and tc.checkpoint_interval and step % tc.checkpoint_interval == 0:
            save_checkpoint(model, out_dir / f"step_{step}.npz")
        batch = fixtures.batch(picks, model.scale, patch)
        terms = compute_loss(model, batch, tc, extractor)
        value = float(terms.total.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(step, value)
        opt.zero_grad()
        terms.total.backward()
        opt.step()
        history.append({"step": step, "epoch": epoch, **terms.as_floats(), "picks": picks})
    if out_dir:
        save_checkpoint(model, out_dir / "final.npz")
        write_history_csv(history, out_dir / "history.csv")
    model.net.eval()
    return model, history


def recompute_step_loss(model, dataset, tc, picks):
    """Loss of ``model`` on the batch described by ``picks`` (no update)."""
    fixtures = _Fixtures(model, dataset, tc.canny)
    sizes = [item[0].shape[1:] for item in fixtures.items]
    patch = min(tc.patch_size, min(min(s) for s in sizes))
    extractor = build_extractor(tc.extractor) if (tc.objective != "l1" and tc.weights.beta) else None
    model.net.train()
    with torch.no_grad():
        return compute_loss(model, fixtures.batch(picks, model.scale, patch), tc, extractor).as_floats()


def write_history_csv(history, path):
    keys = ("step", "epoch", "total", "l1", "ea_pixel", "ea_feature")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(history)


def save_checkpoint(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.net.state_dict().items()}
    meta = {"config": asdict(model.cfg), "canny": asdict(model.canny_params)}
    np.savez(path, format_version=np.array(CHECKPOINT_VERSION), meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(str(data["meta"]))
        state = {k[len("param/") :]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("param/")}
    model = build_toy_model(ToySRConfig(**meta["config"]))
    model.net.load_state_dict(state)
    model.net.eval()
    model.canny_params = CannyParams(**meta["canny"])
    return model


def fixture_scores(model, pairs, backend=None, canny_params=CannyParams()):
    """Mean reconstruction and edge scores of ``model`` over held-out pairs.

    ``edge_l1`` compares the Canny map of the SR output with the Canny map
    of the ground truth; ``head_edge_l1`` does the same for the edge head.
    """
    from .metrics import RandomConvBackend, lpips, psnr, ssim

    backend = backend or RandomConvBackend()
    rows = []
    for pair in pairs:
        sr, edge = infer(model, pair.lr)
        c_h = canny(pair.hr, canny_params).astype(np.float64)
        row = {
            "l1": float(np.mean(np.abs(sr - pair.hr))),
            "psnr": psnr(sr, pair.hr),
            "ssim": ssim(sr, pair.hr),
            "lpips": lpips(sr, pair.hr, backend),
            "edge_l1": float(np.mean(np.abs(canny(sr, canny_params) - c_h))),
        }
        if edge is not None:
            row["head_edge_l1"] = float(np.mean(np.abs(edge - c_h)))
        rows.append(row)
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
