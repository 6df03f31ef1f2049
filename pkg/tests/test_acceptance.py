"""Acceptance criteria, one test per criterion.

Every test prints a single ``criterion N [PASS|FAIL] ...`` line (also collected
into the terminal summary) before asserting, so a red criterion still reports
the measured numbers.
"""

import math
import os
import time

import numpy as np
import pytest
import torch

from _fixtures import fixture_params, misaligned_pair, recovery_errors
from _oracles import canny_reference, edit_distance_recursive, ned_reference
from conftest import ACCEPTANCE_LINES
from textsr.datapipe import glyph_dataset, register_pair
from textsr.edge import canny
from textsr.imageops import bicubic_upsample
from textsr.losses import LossWeights, TinyConvExtractor, ea_feature_loss, ea_pixel_loss, gradient_check, l1_loss, total_loss
from textsr.metrics import RandomConvBackend, edit_distance, lpips, ned, psnr, ssim
from textsr.protocol import (
    BicubicAdapter,
    GroundTruthAdapter,
    NullRecognizer,
    ProtocolConfig,
    TemplateRecognizer,
    crop_text_line,
    evaluate,
    recognize_ground_truth,
)
from textsr.trainer import ToySRConfig, TrainConfig, build_toy_model, fixture_scores, train


def record(n, ok, detail):
    line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_criterion_1_edit_distance_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    alphabet = "abcd"
    ed_bad = ned_bad = 0
    for _ in range(1000):
        p = "".join(rng.choice(list(alphabet), rng.integers(0, 9)))
        g = "".join(rng.choice(list(alphabet), rng.integers(0, 9)))
        ed_bad += edit_distance(p, g) != edit_distance_recursive(p, g)
        ned_bad += ned(p, g) != ned_reference(p, g)
    dt = time.perf_counter() - t0
    ok = ed_bad == 0 and ned_bad == 0 and dt < 10
    assert record(1, ok, f"edit_distance mismatches {ed_bad}/1000, NED mismatches {ned_bad}/1000, {dt:.2f}s (< 10s)")


def test_criterion_2_ssim_psnr_closed_forms():
    a = np.random.default_rng(0).random((32, 32, 3))
    self_ssim = ssim(a, a)
    c1 = 0.01**2
    const = ssim(np.zeros((16, 16)), np.ones((16, 16)))
    p = psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.5))
    errs = (abs(self_ssim - 1), abs(const - c1 / (1 + c1)), abs(p - 10 * math.log10(4)))
    ok = errs[0] <= 1e-9 and errs[1] <= 1e-8 and errs[2] <= 1e-6
    assert record(2, ok, f"|ssim(a,a)-1|={errs[0]:.1e} (1e-9), constant SSIM err {errs[1]:.1e} (1e-8), PSNR {p:.6f} err {errs[2]:.1e} (1e-6)")


def test_criterion_3_canny_structure():
    t0 = time.perf_counter()
    const = np.full((32, 32), 0.4)
    step = np.zeros((32, 32))
    step[:, 16:] = 1.0
    square = np.zeros((32, 32))
    square[8:24, 8:24] = 1.0
    e_const, e_step, e_sq = canny(const), canny(step), canny(square)
    step_cols = np.unique(np.nonzero(e_step)[1])
    checks = {
        "constant zero": e_const.sum() == 0,
        "step single column": len(step_cols) == 1 and e_step[1:-1].sum(axis=1).tolist() == [1] * 30,
        "square count": abs(int(e_sq.sum()) - 60) <= 8,
        "oracle agreement": all(np.array_equal(canny(x), canny_reference(x)) for x in (const, step, square)),
    }
    dt = time.perf_counter() - t0
    ok = all(checks.values()) and dt < 5
    failed = [k for k, v in checks.items() if not v]
    assert record(3, ok, f"square edges {int(e_sq.sum())} (60 +/- 8), failed checks {failed or 'none'}, {dt:.2f}s (< 5s)")


def test_criterion_4_loss_gradients():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    f = TinyConvExtractor().double()
    g = torch.Generator().manual_seed(4)
    i_est, i_gt = (torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64) for _ in range(2))
    c_est = torch.rand(1, 1, 8, 8, generator=g, dtype=torch.float64)
    c_gt = (torch.rand(1, 1, 8, 8, generator=g, dtype=torch.float64) > 0.7).double()
    errs = {
        "l1": gradient_check(lambda a: l1_loss(a, i_gt), [i_est]),
        "ea_pixel": gradient_check(lambda c: ea_pixel_loss(c, c_gt), [c_est]),
        "ea_feature": gradient_check(lambda a, c: ea_feature_loss(a, c, i_gt, c_gt, f), [i_est, c_est]),
        "total": gradient_check(lambda a, c: total_loss(a, c, i_gt, c_gt, LossWeights(1.0, 5e-4), f).total, [i_est, c_est]),
    }
    dt = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-4 and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert record(4, ok, f"max relative gradient error: {detail} (< 1e-4), {dt:.2f}s (< 30s)")


def test_criterion_5_ablation_direction():
    t0 = time.perf_counter()
    torch.set_num_threads(1)
    train_pairs = glyph_dataset(64, 2, hr_size=64, seed=1)
    test_pairs = glyph_dataset(16, 2, hr_size=64, seed=2)
    backend = RandomConvBackend()
    wins, rows = 0, []
    for seed in range(3):
        scores = {}
        for arm, weights in (("l1", LossWeights(0.0, 0.0)), ("ea", LossWeights(1.0, 5e-4))):
            model = build_toy_model(ToySRConfig(seed=seed, use_edge_input=True))
            model, _ = train(model, train_pairs, TrainConfig(max_steps=500, epochs=1000, seed=seed, weights=weights))
            scores[arm] = fixture_scores(model, test_pairs, backend)
        edge_better = scores["ea"]["edge_l1"] < scores["l1"]["edge_l1"]
        lpips_better = scores["ea"]["lpips"] < scores["l1"]["lpips"]
        wins += edge_better and lpips_better
        rows.append(
            f"seed {seed}: edge {scores['ea']['edge_l1']:.4f} vs {scores['l1']['edge_l1']:.4f}, "
            f"lpips {scores['ea']['lpips']:.4f} vs {scores['l1']['lpips']:.4f}"
        )
    dt = time.perf_counter() - t0
    ok = wins >= 2 and dt < 15 * 60
    assert record(5, ok, f"EA beats L1 on both in {wins}/3 seeds (need 2); {'; '.join(rows)}; {dt:.0f}s (< 900s)")


def test_criterion_6_protocol_self_consistency(small_manifest):
    cfg = ProtocolConfig()
    rec = TemplateRecognizer(small_manifest)
    gt = evaluate(small_manifest, GroundTruthAdapter(small_manifest), rec, cfg)
    direct = recognize_ground_truth(small_manifest, rec, cfg)
    gt_ok = all(r.psnr == math.inf for r in gt.per_line) and [r.ned for r in gt.per_line] == [r.ned for r in direct.per_line]

    bic = evaluate(small_manifest, BicubicAdapter(2), NullRecognizer(), cfg)
    expected = []
    for e in small_manifest.entries:
        pair = small_manifest.load_pair(e)
        sr = np.clip(bicubic_upsample(pair.lr, 2), 0, 1)
        for line in e.lines:
            p, g = crop_text_line(sr, line.quad), crop_text_line(pair.hr, line.quad)
            n = None if line.illegible else ned("", line.transcript.lower())
            expected.append((psnr(p, g), ssim(p, g), lpips(p, g, cfg.lpips_backend), n))
    bic_ok = [(r.psnr, r.ssim, r.lpips, r.ned) for r in bic.per_line] == expected
    assert record(6, gt_ok and bic_ok, f"GT model exact: {gt_ok}, bicubic vs standalone exact: {bic_ok} ({len(expected)} lines)")


def test_criterion_7_registration_recovery():
    worst_t = worst_p = 0.0
    monotone = True
    for seed in range(50):
        p = fixture_params(seed)
        lr, hr = misaligned_pair(seed, **p)
        _, t = register_pair(lr, hr, 4)
        t_err, p_err = recovery_errors(t, **p)
        worst_t, worst_p = max(worst_t, t_err), max(worst_p, p_err)
        monotone &= bool(np.all(np.diff(t.history) <= 0))
    ok = worst_t <= 0.5 and worst_p <= 0.02 and monotone
    assert record(7, ok, f"50 fixtures: worst translation err {worst_t:.3f}px (0.5), worst gain/bias err {worst_p:.4f} (0.02), monotone residual {monotone}")


REAL_MANIFEST = os.environ.get("TEXTSR_REALCE_MANIFEST")
REAL_RECOGNIZER = os.environ.get("TEXTSR_REALCE_RECOGNIZER")


def test_criterion_8_realce_bicubic_row():
    if not (REAL_MANIFEST and REAL_RECOGNIZER):
        reason = "set TEXTSR_REALCE_MANIFEST and TEXTSR_REALCE_RECOGNIZER to run"
        ACCEPTANCE_LINES.append(f"criterion 8 [SKIP] dataset-gated: {reason}")
        pytest.skip(reason)
    from textsr.dataset import load_manifest
    from textsr.protocol import resolve_recognizer

    m = load_manifest(REAL_MANIFEST)
    rep = evaluate(m, BicubicAdapter(4), resolve_recognizer(REAL_RECOGNIZER, m), ProtocolConfig(), jobs=os.cpu_count() or 1)
    a = rep.aggregate
    ok = abs(a["psnr"] - 19.65) <= 0.3 and abs(a["ssim"] - 0.6684) <= 0.01 and abs(a["ned"] - 0.6173) <= 0.02
    assert record(8, ok, f"PSNR {a['psnr']:.2f} (19.65 +/- 0.3), SSIM {a['ssim']:.4f} (0.6684 +/- 0.01), NED {a['ned']:.4f} (0.6173 +/- 0.02)")
