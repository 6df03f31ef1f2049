import numpy as np
import pytest
import torch

from textsr.datapipe import glyph_dataset
from textsr.losses import LossWeights, build_extractor
from textsr.trainer import (
    ToySRConfig,
    TrainConfig,
    TrainingDiverged,
    _Fixtures,
    build_toy_model,
    compute_loss,
    fixture_scores,
    infer,
    load_checkpoint,
    parameter_checksum,
    recompute_step_loss,
    save_checkpoint,
    train,
)

SMALL = dict(base_channels=8, num_blocks=1)


@pytest.fixture(scope="module")
def pairs():
    return glyph_dataset(4, 2, hr_size=32, seed=0)


def test_same_seed_same_checksum():
    a = build_toy_model(ToySRConfig(seed=3))
    b = build_toy_model(ToySRConfig(seed=3))
    c = build_toy_model(ToySRConfig(seed=4))
    assert parameter_checksum(a) == parameter_checksum(b) != parameter_checksum(c)


def test_shapes_and_edge_input():
    for use_edge in (False, True):
        m = build_toy_model(ToySRConfig(use_edge_input=use_edge, **SMALL))
        assert m.net.head.in_channels == (4 if use_edge else 3)
        assert m.prepare(np.zeros((16, 16, 3))).shape[0] == (4 if use_edge else 3)
        hr, edge = infer(m, np.random.default_rng(0).random((16, 16, 3)))
        assert hr.shape == (32, 32, 3) and edge.shape == (32, 32)
    m4 = build_toy_model(ToySRConfig(scale=4, predict_edge_head=False, **SMALL))
    hr, edge = infer(m4, np.zeros((8, 12, 3)))
    assert hr.shape == (32, 48, 3) and edge is None


def test_infer_clamps_and_rejects_small_inputs():
    m = build_toy_model(ToySRConfig(**SMALL))
    hr, _ = infer(m, np.zeros((16, 16, 3)))
    assert np.isfinite(hr).all() and hr.min() >= 0 and hr.max() <= 1
    with pytest.raises(ValueError):
        infer(m, np.zeros((7, 16, 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        ToySRConfig(scale=3)
    with pytest.raises(ValueError):
        ToySRConfig(base_channels=4)
    with pytest.raises(ValueError):
        ToySRConfig(num_blocks=0)
    with pytest.raises(ValueError):
        TrainConfig(step_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(objective="gan")


@pytest.mark.parametrize("seed", range(5))
def test_single_step_descends(seed, pairs):
    model = build_toy_model(ToySRConfig(seed=seed, use_edge_input=True, **SMALL))
    tc = TrainConfig(step_size=1e-4, seed=seed)
    fx = _Fixtures(model, pairs, tc.canny)
    batch = fx.batch([(0, 0, 0), (1, 0, 0)], 2, 16)
    extractor = build_extractor("tiny")
    opt = torch.optim.Adam(model.net.parameters(), lr=tc.step_size)
    before = compute_loss(model, batch, tc, extractor).total
    opt.zero_grad()
    before.backward()
    opt.step()
    after = compute_loss(model, batch, tc, extractor).total
    assert float(after.detach()) < float(before.detach())


def test_overfit_four_pairs():
    torch.set_num_threads(1)
    data = glyph_dataset(4, 2, hr_size=32, seed=1)
    model = build_toy_model(ToySRConfig(seed=0))
    tc = TrainConfig(step_size=1e-3, batch_size=4, epochs=500, patch_size=16, weights=LossWeights(0, 0))
    model, history = train(model, data, tc)
    assert len(history) == 500
    assert np.mean([h["l1"] for h in history[-10:]]) < 0.02


def test_zero_weights_match_pure_l1(pairs):
    base = dict(max_steps=5, batch_size=2, patch_size=16, seed=2)
    _, h_zero = train(build_toy_model(ToySRConfig(**SMALL)), pairs, TrainConfig(weights=LossWeights(0, 0), **base))
    _, h_l1 = train(build_toy_model(ToySRConfig(**SMALL)), pairs, TrainConfig(objective="l1", **base))
    assert h_zero == h_l1


def test_training_is_bit_reproducible(pairs):
    tc = TrainConfig(max_steps=4, batch_size=2, patch_size=16, seed=5)
    a, ha = train(build_toy_model(ToySRConfig(use_edge_input=True, **SMALL)), pairs, tc)
    b, hb = train(build_toy_model(ToySRConfig(use_edge_input=True, **SMALL)), pairs, tc)
    assert ha == hb
    assert parameter_checksum(a) == parameter_checksum(b)


def test_history_matches_checkpoints(pairs, tmp_path):
    tc = TrainConfig(max_steps=6, batch_size=2, patch_size=16, checkpoint_interval=2, seed=1)
    model, history = train(build_toy_model(ToySRConfig(use_edge_input=True, **SMALL)), pairs, tc, tmp_path)
    assert sorted(p.name for p in tmp_path.glob("step_*.npz")) == ["step_0.npz", "step_2.npz", "step_4.npz"]
    for k in (0, 2, 4):
        ckpt = load_checkpoint(tmp_path / f"step_{k}.npz")
        got = recompute_step_loss(ckpt, pairs, tc, history[k]["picks"])
        for key in ("total", "l1", "ea_pixel", "ea_feature"):
            assert got[key] == pytest.approx(history[k][key], rel=1e-6, abs=1e-9)
    assert (tmp_path / "final.npz").is_file()
    lines = (tmp_path / "history.csv").read_text().splitlines()
    assert lines[0] == "step,epoch,total,l1,ea_pixel,ea_feature" and len(lines) == 7


def test_every_parameter_gets_gradient(pairs):
    model = build_toy_model(ToySRConfig(use_edge_input=True, **SMALL))
    tc = TrainConfig()
    batch = _Fixtures(model, pairs, tc.canny).batch([(0, 0, 0), (2, 0, 0)], 2, 16)
    compute_loss(model, batch, tc, build_extractor("tiny")).total.backward()
    for name, p in model.net.named_parameters():
        assert p.grad is not None and float(p.grad.abs().sum()) > 0, name


def test_checkpoint_round_trip(tmp_path):
    m = build_toy_model(ToySRConfig(seed=9, use_edge_input=True, **SMALL))
    save_checkpoint(m, tmp_path / "c.npz")
    back = load_checkpoint(tmp_path / "c.npz")
    assert parameter_checksum(back) == parameter_checksum(m)
    assert back.cfg == m.cfg
    x = np.random.default_rng(0).random((16, 16, 3))
    np.testing.assert_array_equal(infer(back, x)[0], infer(m, x)[0])


def test_divergence_is_reported(pairs):
    model = build_toy_model(ToySRConfig(**SMALL))
    with torch.no_grad():
        model.net.rgb.bias.fill_(float("nan"))
    with pytest.raises(TrainingDiverged) as info:
        train(model, pairs, TrainConfig(max_steps=3, batch_size=2, patch_size=16))
    assert info.value.step == 0


def test_scale_mismatch_rejected(pairs):
    with pytest.raises(ValueError):
        train(build_toy_model(ToySRConfig(scale=4, **SMALL)), pairs, TrainConfig(max_steps=1))
    with pytest.raises(ValueError):
        train(build_toy_model(ToySRConfig(**SMALL)), [], TrainConfig(max_steps=1))


def test_fixture_scores_keys(pairs):
    s = fixture_scores(build_toy_model(ToySRConfig(**SMALL)), pairs[:2])
    assert set(s) == {"l1", "psnr", "ssim", "lpips", "edge_l1", "head_edge_l1"}
