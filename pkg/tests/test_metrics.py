import csv

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from hacbsr.degradation import CovarianceSpec, gaussian_kernel
from hacbsr.exceptions import ShapeError
from hacbsr.metrics import (MetricRecord, MetricReport, align_kernel, bicubic_upsample,
                            kernel_psnr, psnr, ssim)


def smooth_image(rng, n=48):
    from scipy.ndimage import gaussian_filter
    x = gaussian_filter(rng.random((n, n)), 2)
    return (x - x.min()) / (x.max() - x.min())


def test_psnr_cap_and_closed_form(rng):
    a = rng.random((16, 16))
    assert psnr(a, a) == 100.0
    b = a + 0.1  # MSE = 0.01
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, b) == psnr(b, a)


def test_psnr_decreases_with_noise(rng):
    a = rng.random((32, 32))
    noise = rng.standard_normal((32, 32))
    vals = [psnr(a, a + s * noise) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_identity_and_symmetry(rng):
    a, b = smooth_image(rng), smooth_image(rng)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9


def test_ssim_matches_skimage(rng):
    a = smooth_image(rng)
    b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_independent_noise_near_zero():
    vals = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        vals.append(ssim(r.random((64, 64)), r.random((64, 64))))
    assert abs(np.mean(vals)) < 0.1


def test_ssim_anticorrelated_negative(rng):
    a = smooth_image(rng)
    assert ssim(a, 1 - a) < 0


def test_kernel_psnr_identity_and_shift():
    k = gaussian_kernel(CovarianceSpec(1.0, 1.5, 0.2), 11)
    other = gaussian_kernel(CovarianceSpec(1.4, 1.2, 0.0), 11)
    assert kernel_psnr(k, k) == 100.0
    shifted = np.roll(other, 1, axis=1)
    assert kernel_psnr(shifted, k) == pytest.approx(kernel_psnr(other, k), abs=1e-12)
    assert np.allclose(align_kernel(np.roll(k, (1, -1), axis=(0, 1))), k)


def test_kernel_psnr_direct_formula():
    a = gaussian_kernel(CovarianceSpec(1, 1, 0), 11)
    b = gaussian_kernel(CovarianceSpec(1.5, 1.5, 0), 11)
    expected = 10 * np.log10(b.max() ** 2 / np.mean((a - b) ** 2))
    assert kernel_psnr(a, b) == pytest.approx(expected, abs=1e-9)


def test_bicubic_upsample_shape_and_constant():
    y = np.full((8, 10), 0.3)
    up = bicubic_upsample(y, 3)
    assert up.shape == (24, 30) and np.allclose(up, 0.3, atol=1e-6)


def test_report_averages_and_csv(tmp_path):
    rep = MetricReport()
    rows = [("a", 2, 30.0, 0.8, 20.0), ("b", 2, 25.5, 0.6, 18.0), ("c", 3, 27.25, 0.7, 19.5)]
    for r in rows:
        rep.add(MetricRecord(*r))
    avg = rep.averages()
    assert avg["psnr"] == pytest.approx(np.mean([r[2] for r in rows]), abs=1e-9)
    rep.write_csv(tmp_path / "e.csv")
    with (tmp_path / "e.csv").open() as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["id", "scale", "psnr", "ssim", "kernel_psnr"]
    assert table[-1][0] == "average"
    assert float(table[-1][2]) == pytest.approx(np.mean([float(t[2]) for t in table[1:-1]]),
                                                abs=1e-9)
    shuffled = MetricReport(records=list(reversed(rep.records)))
    assert shuffled.averages() == pytest.approx(avg, abs=1e-12)
