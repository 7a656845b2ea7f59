"""Reference-based image quality metrics: PSNR, SSIM and pixel-domain VIF.

All metrics take magnitude images (real, nonnegative) and use the target's
maximum as data range unless one is given. SSIM's local statistics are written
against a generic filter callable so the training loss can run the same
formula on autodiff variables.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from kslab.errors import InvalidArgumentError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
VIF_SCALES = 4
VIF_NOISE_VAR = 2.0
VIF_MIN_SIZE = 41
CSV_HEADER = ("slice_id", "psnr_db", "ssim", "vif")


def gaussian_window_1d(size, sigma):
    half = (size - 1) / 2
    taps = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma * sigma))
    return taps / taps.sum()


def gaussian_window(size, sigma):
    """Normalized separable 2D Gaussian window."""
    taps = gaussian_window_1d(size, sigma)
    return np.outer(taps, taps)


def filter_valid(image, taps):
    """Separable correlation with ``outer(taps, taps)`` over the last two axes,
    keeping only fully overlapped positions."""
    half = len(taps) // 2
    out = ndimage.correlate1d(image, taps, axis=-1, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=-2, mode="constant")
    return out[..., half : image.shape[-2] - half, half : image.shape[-1] - half]


def _pair(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def psnr(pred, target, data_range=None):
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are identical."""
    pred, target = _pair(pred, target)
    if data_range is None:
        data_range = float(target.max())
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def ssim_map(pred, target, data_range, filt):
    """Local SSIM map from windowed means, variances and covariance.

    ``filt`` is applied to ``pred``-dependent quantities and must be linear;
    ``pred`` may be any object supporting ``+ - * /`` with arrays.
    """
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_p = filt(pred)
    mu_t = filt(target)
    var_p = filt(pred * pred) - mu_p * mu_p
    var_t = filt(target * target) - mu_t * mu_t
    cov = filt(pred * target) - mu_p * mu_t
    numerator = (mu_p * mu_t * 2.0 + c1) * (cov * 2.0 + c2)
    denominator = (mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2)
    return numerator / denominator


def ssim(pred, target, data_range=None):
    """Mean structural similarity over all valid 11x11 Gaussian windows (sigma 1.5)."""
    pred, target = _pair(pred, target)
    if min(pred.shape[-2:]) < SSIM_WINDOW:
        raise InvalidArgumentError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {pred.shape}")
    if data_range is None:
        data_range = float(target.max())
    taps = gaussian_window_1d(SSIM_WINDOW, SSIM_SIGMA)
    return float(np.mean(ssim_map(pred, target, data_range, lambda a: filter_valid(a, taps))))


def vif_p(pred, target, data_range=None):
    """Pixel-domain visual information fidelity over four dyadic scales.

    Images are rescaled to a 0-255 range (by ``255 / data_range``) so the fixed
    channel noise variance of 2 has its usual meaning. At each scale a Gaussian
    window of size ``2**(5 - scale) + 1`` (sigma = size / 5) gives local
    statistics; coarser scales are filtered and decimated by 2. The result is the
    ratio of the information shared with the distorted image to the information
    in the reference, each summed over all scales.
    """
    pred, target = _pair(pred, target)
    if min(pred.shape) < VIF_MIN_SIZE:
        raise InvalidArgumentError(f"VIF needs images of at least {VIF_MIN_SIZE}x{VIF_MIN_SIZE}, got {pred.shape}")
    if data_range is None:
        data_range = float(target.max())
    scale = 255.0 / data_range if data_range > 0 else 1.0
    ref, dist = target * scale, pred * scale
    eps = 1e-10
    num = den = 0.0
    for level in range(1, VIF_SCALES + 1):
        size = 2 ** (VIF_SCALES - level + 1) + 1
        taps = gaussian_window_1d(size, size / 5.0)
        if level > 1:
            ref = filter_valid(ref, taps)[::2, ::2]
            dist = filter_valid(dist, taps)[::2, ::2]
        mu_r, mu_d = filter_valid(ref, taps), filter_valid(dist, taps)
        var_r = np.maximum(filter_valid(ref * ref, taps) - mu_r * mu_r, 0.0)
        var_d = np.maximum(filter_valid(dist * dist, taps) - mu_d * mu_d, 0.0)
        cov = filter_valid(ref * dist, taps) - mu_r * mu_d

        gain = cov / (var_r + eps)
        noise = var_d - gain * cov
        flat_ref = var_r < eps
        gain[flat_ref] = 0.0
        noise[flat_ref] = var_d[flat_ref]
        var_r[flat_ref] = 0.0
        flat_dist = var_d < eps
        gain[flat_dist] = 0.0
        noise[flat_dist] = 0.0
        negative = gain < 0
        noise[negative] = var_d[negative]
        gain[negative] = 0.0
        noise = np.maximum(noise, eps)

        num += float(np.sum(np.log10(1.0 + gain * gain * var_r / (noise + VIF_NOISE_VAR))))
        den += float(np.sum(np.log10(1.0 + var_r / VIF_NOISE_VAR)))
    return num / den if den > 0 else 1.0


@dataclass(frozen=True)
class SliceMetrics:
    slice_id: str
    psnr: float
    ssim: float
    vif: float


@dataclass(frozen=True)
class MetricsReport:
    """Per-slice metrics with mean and population standard deviation."""

    per_slice: tuple
    mean: dict
    std: dict

    @classmethod
    def from_rows(cls, rows):
        rows = tuple(rows)
        if not rows:
            raise InvalidArgumentError("a metrics report needs at least one slice")
        mean, std = {}, {}
        for name in ("psnr", "ssim", "vif"):
            values = np.array([getattr(r, name) for r in rows], dtype=float)
            mean[name] = float(np.mean(values))
            std[name] = float(np.std(values)) if np.all(np.isfinite(values)) else math.nan
        return cls(rows, mean, std)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.per_slice:
            writer.writerow([r.slice_id, _fmt(r.psnr), _fmt(r.ssim), _fmt(r.vif)])
        writer.writerow(["mean"] + [_fmt(self.mean[k]) for k in ("psnr", "ssim", "vif")])
        writer.writerow(["std"] + [_fmt(self.std[k]) for k in ("psnr", "ssim", "vif")])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path):
        """Parse a report CSV; the aggregate rows are recomputed, not trusted."""
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise InvalidArgumentError(f"{path}: not a metrics CSV")
        slices = [
            SliceMetrics(r[0], float(r[1]), float(r[2]), float(r[3])) for r in rows[1:] if r[0] not in ("mean", "std")
        ]
        return cls.from_rows(slices)


def _fmt(value):
    return repr(float(value))


def evaluate_pair(pred, target, slice_id=""):
    return SliceMetrics(str(slice_id), psnr(pred, target), ssim(pred, target), vif_p(pred, target))


def evaluate_pair_set(preds, targets, slice_ids=None):
    """Metrics for every (prediction, target) pair plus their aggregates."""
    if len(preds) != len(targets):
        raise InvalidArgumentError(f"{len(preds)} predictions but {len(targets)} targets")
    if len(preds) == 0:
        raise InvalidArgumentError("no image pairs to evaluate")
    if slice_ids is None:
        slice_ids = [str(i) for i in range(len(preds))]
    return MetricsReport.from_rows(evaluate_pair(p, t, s) for p, t, s in zip(preds, targets, slice_ids))
