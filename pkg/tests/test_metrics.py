"""PSNR/SSIM checked against naive loop oracles and hand values."""

import math

import numpy as np
import pytest

from derain.metrics import (psnr, ssim, to_luminance, evaluate_pairs,
                            write_report_csv)
from oracles import naive_psnr, naive_ssim_gray, rel_err


def test_psnr_hand_value():
    # uniform difference of 0.1 gives MSE 0.01 and exactly 20 dB
    a = np.full((8, 8, 3), 0.2)
    b = np.full((8, 8, 3), 0.3)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).uniform(0, 1, (8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_matches_naive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a = rng.uniform(0, 1, (12, 12, 3))
        b = rng.uniform(0, 1, (12, 12, 3))
        assert abs(psnr(a, b) - naive_psnr(a, b)) < 1e-9


def test_psnr_peak_shift():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.5)
    # doubling the peak adds 20*log10(2) dB
    assert psnr(a, b, peak=2.0) - psnr(a, b, peak=1.0) == \
        pytest.approx(20 * math.log10(2), abs=1e-12)


def test_psnr_rejects_mismatch_and_bad_peak():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 4)), peak=0.0)


def test_psnr_symmetry():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (10, 10))
    b = rng.uniform(0, 1, (10, 10))
    assert psnr(a, b) == psnr(b, a)


def test_ssim_self_is_one():
    a = np.random.default_rng(3).uniform(0, 1, (32, 32))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_naive_oracle():
    rng = np.random.default_rng(4)
    for _ in range(3):
        a = rng.uniform(0, 1, (20, 20))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert rel_err(ssim(a, b), naive_ssim_gray(a, b)) < 1e-4


def test_ssim_small_image_window_shrinks():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 1, (7, 7))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    assert rel_err(ssim(a, b), naive_ssim_gray(a, b)) < 1e-4


def test_ssim_symmetry():
    rng = np.random.default_rng(6)
    a = rng.uniform(0, 1, (24, 24))
    b = rng.uniform(0, 1, (24, 24))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_orders_degradation():
    rng = np.random.default_rng(7)
    a = rng.uniform(0, 1, (32, 32))
    mild = np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1)
    harsh = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert ssim(a, mild) > ssim(a, harsh)


def test_ssim_rgb_uses_luminance():
    rng = np.random.default_rng(8)
    a = rng.uniform(0, 1, (16, 16, 3))
    b = rng.uniform(0, 1, (16, 16, 3))
    assert ssim(a, b) == pytest.approx(
        ssim(to_luminance(a), to_luminance(b)), abs=1e-12)


def test_to_luminance_weights():
    px = np.zeros((1, 1, 3))
    px[0, 0] = [1.0, 0.0, 0.0]
    assert to_luminance(px)[0, 0] == pytest.approx(0.299)
    px[0, 0] = [0.0, 1.0, 1.0]
    assert to_luminance(px)[0, 0] == pytest.approx(0.587 + 0.114)
    with pytest.raises(ValueError):
        to_luminance(np.zeros((4, 4, 2)))


def test_evaluate_pairs_and_csv(tmp_path):
    rng = np.random.default_rng(9)
    ref = rng.uniform(0, 1, (16, 16, 3))
    noisy = np.clip(ref + 0.1, 0, 1)
    report = evaluate_pairs([("exact", ref, ref), ("noisy", noisy, ref)])
    assert len(report.rows) == 2
    assert report.rows[0][1] == math.inf
    # the infinite row is excluded from the mean
    assert report.mean_psnr == pytest.approx(report.rows[1][1])
    out = tmp_path / "report.csv"
    write_report_csv(report, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "image,psnr,ssim"
    assert lines[-1].startswith("mean,")
    assert len(lines) == 4


def test_evaluate_pairs_clips_raw_input():
    ref = np.full((8, 8, 3), 0.5)
    hot = np.full((8, 8, 3), 1.4)    # clips to 1.0, diff 0.5
    report = evaluate_pairs([("hot", hot, ref)])
    assert report.rows[0][1] == pytest.approx(psnr(np.ones_like(ref), ref))
