import numpy as np
import pytest

from wfno import metrics

from _oracles import ssim_windowed_reference


def test_psnr_known_values():
    a = np.zeros((4, 4, 3))
    b = np.full((4, 4, 3), 0.1)
    assert metrics.psnr(a, b) == pytest.approx(20.0, abs=1e-12)
    assert metrics.psnr(a, np.full_like(a, 0.01)) == pytest.approx(40.0, abs=1e-10)


def test_psnr_identical_is_inf():
    a = np.random.default_rng(0).uniform(0, 1, (5, 5, 3))
    assert metrics.psnr(a, a.copy()) == float("inf")


def test_psnr_shape_mismatch():
    with pytest.raises(metrics.MetricError):
        metrics.psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_db_text_caps_infinity():
    assert metrics.db_text(float("inf")) == "99.00"
    assert metrics.db_text(31.4159) == "31.42"


def test_gaussian_window_normalized_and_symmetric():
    g = metrics.gaussian_window()
    assert g.size == 11
    assert g.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(g, g[::-1])
    assert g.argmax() == 5


def test_ssim_identical_images():
    a = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
    assert metrics.ssim(a, a.copy()) == pytest.approx(1.0, abs=1e-12)


def test_ssim_symmetry_is_exact():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (14, 14, 3))
    b = rng.uniform(0, 1, (14, 14, 3))
    assert metrics.ssim(a, b) == metrics.ssim(b, a)


def test_ssim_matches_windowed_reference():
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 1, (13, 15, 2))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    got = metrics.ssim(a, b)
    want = ssim_windowed_reference(a, b)
    assert got == pytest.approx(want, abs=1e-12)


def test_ssim_orders_distortions():
    rng = np.random.default_rng(4)
    a = rng.uniform(0.3, 0.7, (16, 16, 1))
    smooth = np.clip(a + 0.02, 0, 1)
    checker = a.copy()
    checker[::2, ::2] = 1.0 - checker[::2, ::2]
    assert metrics.ssim(a, checker) < metrics.ssim(a, smooth)


def test_ssim_small_image_rejected():
    a = np.zeros((8, 8, 1))
    with pytest.raises(metrics.MetricError):
        metrics.ssim(a, a)


def test_ssim_accepts_grayscale_2d():
    a = np.random.default_rng(5).uniform(0, 1, (12, 12))
    assert metrics.ssim(a, a.copy()) == pytest.approx(1.0, abs=1e-12)


def test_bt601_luma():
    img = np.zeros((2, 2, 3))
    img[0, 0] = [1.0, 0.0, 0.0]
    img[0, 1] = [0.0, 1.0, 0.0]
    img[1, 0] = [0.0, 0.0, 1.0]
    img[1, 1] = [1.0, 1.0, 1.0]
    y = metrics.bt601_luma(img)
    assert y.shape == (2, 2, 1)
    assert y[0, 0, 0] == pytest.approx(0.299)
    assert y[0, 1, 0] == pytest.approx(0.587)
    assert y[1, 0, 0] == pytest.approx(0.114)
    assert y[1, 1, 0] == pytest.approx(1.0)
    with pytest.raises(metrics.MetricError):
        metrics.bt601_luma(np.zeros((2, 2, 1)))


def test_bicubic_baseline_contract():
    lr = np.random.default_rng(6).uniform(-0.2, 1.2, (5, 7, 3))
    up = metrics.bicubic_baseline(lr, 2.0)
    assert up.shape == (10, 14, 3)
    assert up.min() >= 0.0 and up.max() <= 1.0
    same = metrics.bicubic_baseline(np.clip(lr, 0, 1), 1.0)
    assert np.allclose(same, np.clip(lr, 0, 1), atol=1e-12)
    with pytest.raises(metrics.MetricError):
        metrics.bicubic_baseline(lr, 0.5)


def test_bench_counts_and_nfe():
    calls = []

    def run_once():
        calls.append(None)
        return {"nfe": 7 * len(calls)}

    out = metrics.bench(run_once, runs=5)
    assert len(calls) == 6  # warm-up plus the timed runs
    assert out["runs"] == 5
    assert out["nfe"] == 7 * 6
    assert out["wall_ms"] >= 0.0
    assert out["wall_ms_min"] <= out["wall_ms"] <= out["wall_ms_max"]
    with pytest.raises(metrics.MetricError):
        metrics.bench(run_once, runs=0)


def test_metric_report_validation():
    metrics.MetricReport(psnr=30.0, ssim=0.9, wall_ms=1.0, runs=1)
    with pytest.raises(metrics.MetricError):
        metrics.MetricReport(psnr=30.0, ssim=0.9, wall_ms=1.0, runs=0)
    with pytest.raises(metrics.MetricError):
        metrics.MetricReport(psnr=30.0, ssim=0.9, wall_ms=-1.0, runs=1)
