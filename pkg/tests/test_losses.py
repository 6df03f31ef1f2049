import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from textsr.losses import (
    IdentityExtractor,
    LossWeights,
    TinyConvExtractor,
    build_extractor,
    ea_feature_loss,
    ea_pixel_loss,
    gradient_check,
    l1_loss,
    total_loss,
)


def inputs(seed, n=8, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    i_est = torch.rand(1, 3, n, n, generator=g, dtype=dtype)
    i_gt = torch.rand(1, 3, n, n, generator=g, dtype=dtype)
    c_est = torch.rand(1, 1, n, n, generator=g, dtype=dtype)
    c_gt = (torch.rand(1, 1, n, n, generator=g, dtype=dtype) > 0.7).to(dtype)
    return i_est, c_est, i_gt, c_gt


@pytest.fixture(scope="module")
def tiny():
    return TinyConvExtractor().double()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed, tiny):
    i_est, c_est, i_gt, c_gt = inputs(seed)
    assert gradient_check(lambda a: l1_loss(a, i_gt), [i_est]) < 1e-4
    assert gradient_check(lambda c: ea_pixel_loss(c, c_gt), [c_est]) < 1e-4
    fn = lambda a, c: ea_feature_loss(a, c, i_gt, c_gt, tiny)  # noqa: E731
    assert gradient_check(fn, [i_est, c_est]) < 1e-4
    fn = lambda a, c: total_loss(a, c, i_gt, c_gt, LossWeights(), tiny).total  # noqa: E731
    assert gradient_check(fn, [i_est, c_est]) < 1e-4


def test_gradient_check_detects_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return (x**2).sum()

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * torch.ones_like(x)  # true gradient is 2x

    x = torch.rand(4, dtype=torch.float64) + 1.0
    assert gradient_check(Wrong.apply, [x]) > 0.1
    with pytest.raises(ValueError):
        gradient_check(lambda t: t.sum(), [x], epsilon=1.0)


def test_losses_vanish_at_ground_truth(tiny):
    i_est, c_est, i_gt, c_gt = inputs(3)
    terms = total_loss(i_gt, c_gt, i_gt, c_gt, LossWeights(), tiny)
    assert float(terms.total) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_nonnegative_and_symmetric(seed):
    i_est, c_est, i_gt, c_gt = inputs(seed, n=6)
    f = IdentityExtractor()
    assert float(l1_loss(i_est, i_gt)) == pytest.approx(float(l1_loss(i_gt, i_est)))
    assert float(ea_pixel_loss(c_est, c_gt)) >= 0
    assert float(ea_feature_loss(i_est, c_est, i_gt, c_gt, f)) >= 0


def test_total_is_weighted_sum(tiny):
    i_est, c_est, i_gt, c_gt = inputs(4)
    w = LossWeights(0.7, 0.3)
    t = total_loss(i_est, c_est, i_gt, c_gt, w, tiny)
    expected = t.l1 + 0.7 * t.ea_pixel + 0.3 * t.ea_feature
    assert float(t.total) == pytest.approx(float(expected), rel=1e-12)


def test_zero_weights_reduce_to_l1():
    i_est, _, i_gt, c_gt = inputs(5)
    t = total_loss(i_est, None, i_gt, c_gt, LossWeights(0, 0))
    assert float(t.total) == float(l1_loss(i_est, i_gt))
    assert float(t.ea_pixel) == float(t.ea_feature) == 0.0


def test_feature_loss_closed_form_with_identity_extractor():
    i_est, c_est, i_gt, c_gt = inputs(6)
    got = ea_feature_loss(i_est, c_est, i_gt, c_gt, IdentityExtractor())
    # single-channel edge maps are replicated over the three image channels
    expected = (i_est * c_est - i_gt * c_gt).abs().mean()
    assert float(got) == pytest.approx(float(expected), rel=1e-12)


def test_errors():
    i_est, c_est, i_gt, c_gt = inputs(7)
    with pytest.raises(ValueError):
        l1_loss(i_est, i_gt[..., :4])
    with pytest.raises(ValueError):
        total_loss(i_est, c_est, i_gt, c_gt, LossWeights(1, 1), None)
    with pytest.raises(ValueError):
        LossWeights(alpha=-1)
    with pytest.raises(ValueError):
        LossWeights(beta=float("nan"))
    with pytest.raises(ValueError):
        build_extractor("resnet")


def test_extractor_is_frozen(tiny):
    assert all(not p.requires_grad for p in tiny.parameters())
    i_est, c_est, i_gt, c_gt = inputs(8)
    i_est.requires_grad_(True)
    ea_feature_loss(i_est, c_est, i_gt, c_gt, tiny).backward()
    assert i_est.grad is not None and torch.isfinite(i_est.grad).all()


def test_tiny_extractor_is_deterministic():
    a, b = TinyConvExtractor(), TinyConvExtractor()
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    x = torch.rand(1, 3, 8, 8)
    assert np.allclose(a(x).numpy(), b(x).numpy())
