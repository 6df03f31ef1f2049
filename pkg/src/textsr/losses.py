"""Edge-aware loss family on torch tensors.

Tensors are ``(N, C, H, W)`` (a missing batch dimension is added). Every
term uses a mean reduction over all elements, so the balancing weights do
not depend on image size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 5e-4


@dataclass(frozen=True)
class LossWeights:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass
class LossTerms:
    total: torch.Tensor
    l1: torch.Tensor
    ea_pixel: torch.Tensor
    ea_feature: torch.Tensor

    def as_floats(self):
        return {k: float(getattr(self, k).detach()) for k in ("total", "l1", "ea_pixel", "ea_feature")}


def _4d(x):
    return x if x.dim() == 4 else x.unsqueeze(0)


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


class FeatureExtractor(nn.Module):
    """Frozen differentiable feature map; subclasses define ``forward``."""

    in_channels = 3

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()


class IdentityExtractor(FeatureExtractor):
    def forward(self, x):
        return x


class TinyConvExtractor(FeatureExtractor):
    """Two fixed-seed 3x3 conv layers with tanh; smooth, so gradients are exact."""

    def __init__(self, channels=(8, 8), seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        c_in = self.in_channels
        for c_out in channels:
            conv = nn.Conv2d(c_in, c_out, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(1.0 / (9 * c_in)))
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            layers += [conv, nn.Tanh()]
            c_in = c_out
        self.body = nn.Sequential(*layers)
        self.freeze()

    def forward(self, x):
        return self.body(x)


class VGGExtractor(FeatureExtractor):
    """Pre-activation conv5_4 features of an ImageNet-pretrained VGG19."""

    def __init__(self):
        super().__init__()
        import torchvision

        vgg = torchvision.models.vgg19(weights="DEFAULT")
        self.body = vgg.features[:35]
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.freeze()

    def forward(self, x):
        return self.body((x - self.mean.to(x.dtype)) / self.std.to(x.dtype))


EXTRACTORS = {"tiny": TinyConvExtractor, "identity": IdentityExtractor, "vgg19": VGGExtractor}


def build_extractor(name):
    try:
        return EXTRACTORS[name]()
    except KeyError:
        raise ValueError(f"unknown extractor {name!r}; choose from {sorted(EXTRACTORS)}") from None


def _to_extractor_channels(x, f):
    want = getattr(f, "in_channels", 3)
    if x.shape[1] == 1 and want != 1:
        x = x.expand(-1, want, -1, -1)
    return x


def l1_loss(est, gt):
    est, gt = _4d(est), _4d(gt)
    _check(est, gt)
    return (est - gt).abs().mean()


def ea_pixel_loss(c_est, c_gt):
    """Mean absolute difference between predicted and reference edge maps."""
    c_est, c_gt = _4d(c_est), _4d(c_gt)
    _check(c_est, c_gt)
    return (c_gt - c_est).abs().mean()


def ea_feature_loss(i_est, c_est, i_gt, c_gt, f):
    """Mean |F(i_est) * F(c_est) - F(i_gt) * F(c_gt)| with a shared extractor.

    Single-channel edge maps are replicated to the extractor's input channels.
    """
    i_est, c_est, i_gt, c_gt = map(_4d, (i_est, c_est, i_gt, c_gt))
    _check(i_est, i_gt)
    _check(c_est, c_gt)
    if i_est.shape[-2:] != c_est.shape[-2:]:
        raise ValueError("image and edge map differ in spatial size")
    c_est, c_gt = _to_extractor_channels(c_est, f), _to_extractor_channels(c_gt, f)
    est = f(i_est) * f(c_est)
    ref = f(i_gt) * f(c_gt)
    return (est - ref).abs().mean()


def total_loss(i_est, c_est, i_gt, c_gt, w=LossWeights(), f=None):
    """L1 + alpha * pixel edge loss + beta * feature edge loss.

    Terms with a zero weight are not evaluated (their value is reported as 0),
    so an alpha = beta = 0 run is exactly an L1 run. ``c_est`` may be None
    in that case.
    """
    l1 = l1_loss(i_est, i_gt)
    zero = l1.new_zeros(())
    pix = ea_pixel_loss(c_est, c_gt) if w.alpha else zero
    if w.beta:
        if f is None:
            raise ValueError("a feature extractor is required when beta > 0")
        feat = ea_feature_loss(i_est, c_est, i_gt, c_gt, f)
    else:
        feat = zero
    total = l1 + w.alpha * pix + w.beta * feat
    return LossTerms(total, l1, pix, feat)


def gradient_check(fn, inputs, epsilon=1e-6, wrt=None):
    """Max relative error between autograd and central-difference gradients.

    ``fn`` maps the tensors in ``inputs`` to a scalar. Gradients are checked
    for the inputs whose indices are in ``wrt`` (default: all). Relative error
    uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    """
    if not 1e-6 <= epsilon <= 1e-2:
        raise ValueError("epsilon must lie in [1e-6, 1e-2]")
    inputs = [t.detach().to(torch.float64).clone() for t in inputs]
    wrt = range(len(inputs)) if wrt is None else wrt
    for i in wrt:
        inputs[i].requires_grad_(True)
    out = fn(*inputs)
    analytic = torch.autograd.grad(out, [inputs[i] for i in wrt])
    worst = 0.0
    with torch.no_grad():
        for i, grad in zip(wrt, analytic):
            x = inputs[i]
            flat = x.view(-1)
            gflat = grad.reshape(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + epsilon
                up = fn(*inputs).item()
                flat[k] = orig - epsilon
                down = fn(*inputs).item()
                flat[k] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise FloatingPointError(f"non-finite loss when perturbing input {i}, element {k}")
                num = (up - down) / (2 * epsilon)
                ana = gflat[k].item()
                denom = max(abs(ana), abs(num), 1e-8)
                worst = max(worst, abs(ana - num) / denom)
    return worst
