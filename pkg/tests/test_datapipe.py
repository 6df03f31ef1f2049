import numpy as np
import pytest

from _fixtures import fixture_params, misaligned_pair, recovery_errors
from textsr.datapipe import (
    apply_registration,
    central_crop_pair,
    central_crop_window,
    glyph_dataset,
    register_pair,
    synth_degrade,
    synthetic_region,
    write_exceptions,
)
from textsr.dataset import RegionPair
from textsr.imageops import bicubic_downsample


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_registration_recovers_shift_and_photometry(seed):
    p = fixture_params(seed)
    lr, hr = misaligned_pair(seed, **p)
    pair, t = register_pair(lr, hr, 4)
    t_err, p_err = recovery_errors(t, **p)
    assert t_err < 0.5 and p_err < 0.02
    assert not t.flagged
    assert np.all(np.diff(t.history) <= 0)
    assert pair.lr.shape == lr.shape and pair.registration is t


def test_registration_of_aligned_pair_is_identity():
    lr, hr = misaligned_pair(5, 0.0, 0.0)
    _, t = register_pair(lr, hr, 4)
    np.testing.assert_allclose(t.matrix, [[1, 0, 0], [0, 1, 0]], atol=0.05)
    np.testing.assert_allclose(t.gain, 1.0, atol=0.02)


def test_registered_lr_is_closer_to_hr():
    p = fixture_params(7)
    lr, hr = misaligned_pair(7, **p)
    pair, _ = register_pair(lr, hr, 4)
    ref = bicubic_downsample(hr, 4)
    m = 4  # ignore border pixels that were resampled from outside the frame
    before = np.mean(np.abs(lr - ref)[m:-m, m:-m])
    after = np.mean(np.abs(pair.lr - ref)[m:-m, m:-m])
    assert after < 0.5 * before


def test_unrelated_pair_is_flagged():
    a, _ = synthetic_region(128, 128, np.random.default_rng(0), n_lines=3)
    b, _ = synthetic_region(128, 128, np.random.default_rng(50), n_lines=3)
    _, t = register_pair(bicubic_downsample(a, 4), b, 4, max_residual=0.05)
    assert t.flagged and t.residual > 0.05
    assert np.all(np.diff(t.history) <= 0)


def test_registration_errors():
    with pytest.raises(ValueError):
        register_pair(np.zeros((32, 32, 3)), np.zeros((128, 128, 3)), 3)
    with pytest.raises(ValueError):
        register_pair(np.zeros((32, 32, 3)), np.zeros((64, 64, 3)), 4)


def test_apply_identity_registration_is_noop():
    from textsr.dataset import RegistrationTransform

    lr = np.random.default_rng(0).random((16, 16, 3))
    np.testing.assert_allclose(apply_registration(lr, RegistrationTransform.identity(), 2), lr, atol=1e-12)


def test_write_exceptions(tmp_path):
    write_exceptions(["a", "b"], tmp_path / "x.txt")
    assert (tmp_path / "x.txt").read_text() == "a\nb\n"


def test_central_crop_concentric_and_aligned():
    rng = np.random.default_rng(0)
    hr = rng.random((100, 140, 3))
    pair = synth_degrade(hr, 2)
    y0, x0, ch, cw = central_crop_window(pair, 0.5)
    assert ch % 2 == 0 and cw % 2 == 0 and y0 % 2 == 0 and x0 % 2 == 0
    assert abs((y0 + ch / 2) - 50) <= 2 and abs((x0 + cw / 2) - 70) <= 2
    crop = central_crop_pair(pair, 0.5)
    np.testing.assert_array_equal(crop.hr, hr[y0 : y0 + ch, x0 : x0 + cw])
    np.testing.assert_array_equal(crop.lr, pair.lr[y0 // 2 : (y0 + ch) // 2, x0 // 2 : (x0 + cw) // 2])
    assert central_crop_pair(pair, 1.0).hr.shape == hr.shape
    with pytest.raises(ValueError):
        central_crop_pair(pair, 0.1)
    with pytest.raises(ValueError):
        central_crop_pair(pair, 0.0)


def test_synth_degrade():
    hr = np.random.default_rng(0).random((32, 48, 3))
    a = synth_degrade(hr, 4, 1.0, 0.05, seed=3)
    b = synth_degrade(hr, 4, 1.0, 0.05, seed=3)
    c = synth_degrade(hr, 4, 1.0, 0.05, seed=4)
    assert a.lr.shape == (8, 12, 3)
    np.testing.assert_array_equal(a.lr, b.lr)
    assert not np.array_equal(a.lr, c.lr)
    assert a.lr.min() >= 0 and a.lr.max() <= 1
    np.testing.assert_array_equal(synth_degrade(hr, 2).lr, np.clip(bicubic_downsample(hr, 2), 0, 1))
    with pytest.raises(ValueError):
        synth_degrade(hr[:31], 2)


def test_glyph_dataset_seeded():
    a, b = glyph_dataset(3, 2, seed=1), glyph_dataset(3, 2, seed=1)
    assert all(np.array_equal(x.hr, y.hr) and np.array_equal(x.lr, y.lr) for x, y in zip(a, b))
    assert all(isinstance(p, RegionPair) and p.lr.shape == (32, 32, 3) for p in a)


def test_synthetic_region_lines_inside_image():
    img, lines = synthetic_region(64, 128, np.random.default_rng(0), n_lines=2)
    assert img.shape == (64, 128, 3)
    for line in lines:
        line.validate((64, 128))
