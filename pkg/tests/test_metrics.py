import math

import numpy as np
import pytest

from oracles import psnr_loop, ssim_loop, vif_loop
from kslab.errors import InvalidArgumentError
from kslab.metrics import MetricsReport, SliceMetrics, evaluate_pair_set, psnr, ssim, vif_p


def random_pair(rng, shape=(44, 46)):
    target = np.abs(np.cumsum(np.cumsum(rng.standard_normal(shape), 0), 1)) / 10
    pred = np.abs(target + 0.2 * rng.standard_normal(shape))
    return pred, target


def test_ssim_self_similarity(rng):
    _, target = random_pair(rng)
    assert abs(ssim(target, target) - 1.0) < 1e-12


def test_ssim_constant_image_closed_form():
    # luminance term c1 / (1 + c1) with c1 = (0.01 * 1)**2; structure term is 1
    value = ssim(np.zeros((16, 16)), np.ones((16, 16)))
    assert value == pytest.approx(1e-4 / (1 + 1e-4), abs=1e-15)
    assert abs(value - 9.999e-5) < 1e-8


def test_psnr_hand_case():
    target = np.zeros((4, 5))
    target[0, 0] = 10.0
    assert psnr(target + 1.0, target) == 20.0
    assert psnr(target, target) == math.inf


def test_vif_self_is_one(rng):
    _, target = random_pair(rng)
    assert abs(vif_p(target, target) - 1.0) < 1e-10


def test_vif_degrades_with_blur_and_noise(rng):
    pred, target = random_pair(rng, (64, 64))
    assert 0 < vif_p(pred, target) < 1


@pytest.mark.parametrize("k", range(10))
def test_metrics_match_scalar_loops(k):
    rng = np.random.Generator(np.random.PCG64(1000 + k))
    pred, target = random_pair(rng, (41 + k % 3, 43))
    assert psnr(pred, target) == pytest.approx(psnr_loop(pred, target), abs=1e-10)
    assert ssim(pred, target) == pytest.approx(ssim_loop(pred, target), abs=1e-10)
    assert vif_p(pred, target) == pytest.approx(vif_loop(pred, target), abs=1e-8)


def test_size_limits():
    with pytest.raises(InvalidArgumentError):
        ssim(np.ones((10, 20)), np.ones((10, 20)))
    with pytest.raises(InvalidArgumentError):
        vif_p(np.ones((40, 50)), np.ones((40, 50)))
    with pytest.raises(InvalidArgumentError):
        psnr(np.ones((4, 4)), np.ones((4, 5)))


def test_report_uses_population_std_and_roundtrips(rng, tmp_path):
    pairs = [random_pair(rng, (48, 48)) for _ in range(3)]
    report = evaluate_pair_set([p for p, _ in pairs], [t for _, t in pairs], ["a/0", "a/1", "b/0"])
    values = np.array([r.ssim for r in report.per_slice])
    assert report.std["ssim"] == pytest.approx(math.sqrt(np.mean((values - values.mean()) ** 2)), abs=1e-15)
    path = tmp_path / "m.csv"
    report.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "slice_id,psnr_db,ssim,vif"
    assert [line.split(",")[0] for line in lines[1:]] == ["a/0", "a/1", "b/0", "mean", "std"]
    again = MetricsReport.read_csv(path)
    assert again.per_slice == report.per_slice
    for key in ("psnr", "ssim", "vif"):
        assert abs(again.std[key] - report.std[key]) < 1e-12


def test_report_needs_rows():
    with pytest.raises(InvalidArgumentError):
        MetricsReport.from_rows([])
    single = MetricsReport.from_rows([SliceMetrics("x", 1.0, 0.5, 0.25)])
    assert single.std == {"psnr": 0.0, "ssim": 0.0, "vif": 0.0}


def test_psnr_offset_case_and_scale_invariance(rng):
    _, target = random_pair(rng)
    target = target / target.max()
    assert psnr(target + 0.1, target) == pytest.approx(20.0, abs=1e-12)
    pred = target + 0.05 * rng.standard_normal(target.shape)
    assert psnr(2 * pred, 2 * target) == pytest.approx(psnr(pred, target), abs=1e-12)


def test_psnr_increases_along_interpolation(rng):
    pred, target = random_pair(rng)
    values = [psnr((1 - a) * pred + a * target, target) for a in (0.0, 0.2, 0.4, 0.6, 0.8)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_ssim_symmetry_range_and_offset(rng):
    pred, target = random_pair(rng)
    assert abs(ssim(pred, target, data_range=3.0) - ssim(target, pred, data_range=3.0)) < 1e-6
    assert -1 <= ssim(-pred, target) <= 1
    # the contrast-structure term only sees deviations from the local mean
    from kslab.metrics import SSIM_K2, filter_valid, gaussian_window_1d

    def structure(a, b, dr):
        taps = gaussian_window_1d(11, 1.5)
        c2 = (SSIM_K2 * dr) ** 2
        mu_a, mu_b = filter_valid(a, taps), filter_valid(b, taps)
        cov = filter_valid(a * b, taps) - mu_a * mu_b
        var = filter_valid(a * a, taps) - mu_a**2 + filter_valid(b * b, taps) - mu_b**2
        return np.mean((2 * cov + c2) / (var + c2))

    assert abs(structure(pred + 5, target + 5, 2.0) - structure(pred, target, 2.0)) < 1e-6


def test_vif_reference_cases(rng):
    from scipy import ndimage

    _, target = random_pair(rng, (48, 48))
    assert vif_p(np.zeros_like(target), target) < 0.1
    blurred = ndimage.gaussian_filter(target, 2.0)
    value = vif_p(blurred, target)
    assert vif_p(np.zeros_like(target), target) < value < 1.0
    assert value == pytest.approx(vif_loop(blurred, target), abs=1e-8)


def test_two_point_statistics():
    report = MetricsReport.from_rows([SliceMetrics("a", 20.0, 0.5, 0.1), SliceMetrics("b", 30.0, 0.7, 0.3)])
    assert report.mean["psnr"] == 25.0 and report.std["psnr"] == 5.0
