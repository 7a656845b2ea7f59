"""Multicoil MRI acquisition model.

Images are complex arrays of shape (height, width); sensitivity maps and coil
k-spaces are stacks of shape (n_coils, height, width). The encoding operator is

    A x = U * F(S_k * x)     for every coil k

with ``F`` the centered orthonormal FFT and ``U`` a binary mask. Helpers with a
leading underscore broadcast over extra leading batch axes and are shared with
the solvers and the RIM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from kslab.errors import InvalidArgumentError
from kslab.fft import fft2c, ifft2c
from kslab.sampling import SamplingMask, apply_mask, make_full_mask

SENSITIVITY_EPS = 1e-12
SUPPORT_THRESHOLD = 1e-6

__all__ = [
    "AcquisitionSim",
    "MulticoilKSpace",
    "NllConfig",
    "adjoint",
    "check_sensitivities",
    "estimate_sensitivities_from_acs",
    "forward",
    "nll",
    "nll_gradient",
    "rss",
    "simulate_acquisition",
    "simulate_sensitivities",
]


@dataclass(frozen=True, eq=False)
class MulticoilKSpace:
    """Coil k-spaces ``y^k`` (full) or ``U * y^k`` (when ``mask`` is set).

    Attributes:
        coils: complex array of shape (n_coils, height, width).
        mask: the mask the data was subsampled with, or ``None`` for full data.
    """

    coils: np.ndarray
    mask: SamplingMask | None = None

    def __post_init__(self):
        coils = np.asarray(self.coils, dtype=np.complex128)
        if coils.ndim != 3:
            raise InvalidArgumentError(f"coil k-space must have shape (n_coils, H, W), got {coils.shape}")
        if self.mask is not None:
            if self.mask.shape != coils.shape[1:]:
                raise InvalidArgumentError(f"mask shape {self.mask.shape} != coil shape {coils.shape[1:]}")
            if np.any(coils[:, self.mask.bits == 0] != 0):
                raise InvalidArgumentError("subsampled k-space has nonzero entries off the mask")
        object.__setattr__(self, "coils", coils)

    @property
    def n_coils(self):
        return self.coils.shape[0]

    @property
    def shape(self):
        return self.coils.shape[1:]


@dataclass(frozen=True)
class NllConfig:
    """Likelihood variance ``sigma_sq`` of the Gaussian k-space noise model."""

    sigma_sq: float = 1.0

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise InvalidArgumentError(f"sigma_sq must be positive, got {self.sigma_sq}")


@dataclass(frozen=True, eq=False)
class AcquisitionSim:
    """Inputs of a simulated acquisition: object, coils and noise level."""

    phantom: np.ndarray
    sensitivities: np.ndarray
    noise_std: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise InvalidArgumentError(f"noise_std must be nonnegative, got {self.noise_std}")


def check_sensitivities(maps, shape=None):
    """Validate a (n_coils, H, W) stack of maps and return it as complex128."""
    maps = np.asarray(maps, dtype=np.complex128)
    if maps.ndim != 3 or maps.shape[0] < 1:
        raise InvalidArgumentError(f"sensitivities must have shape (n_coils, H, W), got {maps.shape}")
    if shape is not None and maps.shape[1:] != tuple(shape):
        raise InvalidArgumentError(f"sensitivity shape {maps.shape[1:]} does not match {tuple(shape)}")
    return maps


def simulate_sensitivities(height, width, n_coils):
    """Smooth synthetic coil maps with ``sum_k |S_k|^2 == 1`` at every pixel.

    Coil ``k`` has a Gaussian magnitude profile (sigma = half the smaller image
    dimension) centered at angle ``2*pi*k/n_coils`` on a circle of radius
    ``0.3 * min(height, width)`` around the geometric image center, and a linear
    phase ramp pointing in the same direction.
    """
    if height < 1 or width < 1 or n_coils < 1:
        raise InvalidArgumentError(f"invalid sensitivity grid {height}x{width} with {n_coils} coils")
    side = min(height, width)
    ring_radius = 0.6 * side / 2
    sigma = 0.5 * side
    rows = np.arange(height)[:, None] - (height - 1) / 2
    cols = np.arange(width)[None, :] - (width - 1) / 2

    maps = np.empty((n_coils, height, width), dtype=np.complex128)
    for k in range(n_coils):
        theta = 2 * math.pi * k / n_coils
        cy, cx = ring_radius * math.sin(theta), ring_radius * math.cos(theta)
        magnitude = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma**2))
        phase = 0.5 * math.pi * (math.cos(theta) * cols / width + math.sin(theta) * rows / height)
        maps[k] = magnitude * np.exp(1j * phase)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))


def _acs_window(mask):
    """Hann taper over the calibration region, strictly positive inside it."""
    height, width = mask.shape
    acs = mask.acs
    if acs is None:
        raise InvalidArgumentError("ACS mask carries no region descriptor")
    window = np.zeros(mask.shape)
    if acs.kind == "columns":
        n = acs.stop - acs.start
        if n <= 0:
            raise InvalidArgumentError("ACS column band is empty")
        window[:, acs.start : acs.stop] = np.hanning(n + 2)[1:-1]
    else:
        rows = np.arange(height)[:, None] - height // 2
        cols = np.arange(width)[None, :] - width // 2
        dist = np.sqrt(rows * rows + cols * cols)
        inside = dist <= acs.radius
        window[inside] = 0.5 * (1 + np.cos(math.pi * dist[inside] / (acs.radius + 1)))
    return window * mask.acs.to_bits(mask.shape)


def estimate_sensitivities_from_acs(ksp, acs):
    """Estimate coil maps from the autocalibration region.

    Each coil's k-space is tapered by a Hann window over the ACS region and
    transformed to a low-resolution image ``c_k``; the maps are
    ``c_k / (rss(c) + 1e-12)``, zeroed where ``rss(c)`` is below ``1e-6`` of its
    maximum.

    Args:
        ksp: full or subsampled multicoil k-space.
        acs: mask whose ``acs`` descriptor names the calibration region, as
            returned by :func:`kslab.sampling.extract_acs`.
    """
    if acs.shape != ksp.shape:
        raise InvalidArgumentError(f"ACS shape {acs.shape} does not match k-space shape {ksp.shape}")
    window = _acs_window(acs)
    if not window.any():
        raise InvalidArgumentError("ACS region is empty")
    low_res = ifft2c(ksp.coils * window)
    combined = np.sqrt(np.sum(np.abs(low_res) ** 2, axis=0))
    maps = low_res / (combined + SENSITIVITY_EPS)
    peak = combined.max()
    if peak > 0:
        maps[:, combined < SUPPORT_THRESHOLD * peak] = 0
    return maps


def _mask_bits(mask, shape):
    if mask is None:
        return None
    bits = mask.bits if isinstance(mask, SamplingMask) else np.asarray(mask)
    if bits.shape[-2:] != tuple(shape[-2:]):
        raise InvalidArgumentError(f"mask shape {bits.shape[-2:]} does not match image shape {tuple(shape[-2:])}")
    return bits


def _encode(x, maps, bits):
    """``bits * F(S * x)`` for x of shape (..., H, W) and maps (..., C, H, W)."""
    ksp = fft2c(maps * x[..., None, :, :])
    if bits is not None:
        ksp = ksp * bits[..., None, :, :]
    return ksp


def _decode(y, maps, bits):
    """``sum_k conj(S_k) * F^-1(bits * y_k)``; the adjoint of :func:`_encode`."""
    if bits is not None:
        y = y * bits[..., None, :, :]
    return np.sum(np.conj(maps) * ifft2c(y), axis=-3)


def _normal_gradient(x, y, maps, bits, sigma_sq):
    """Likelihood gradient, mask applied twice as written in the update rule."""
    residual = _encode(x, maps, bits) - y
    return _decode(residual, maps, bits) / sigma_sq


def _check_shapes(x, maps):
    x = np.asarray(x)
    if x.shape != maps.shape[1:]:
        raise InvalidArgumentError(f"image shape {x.shape} does not match sensitivity shape {maps.shape[1:]}")
    return x


def forward(x, maps, mask):
    """Masked multicoil encoding ``U * F(S_k * x)``; the result carries ``mask``."""
    maps = check_sensitivities(maps)
    x = _check_shapes(x, maps)
    bits = _mask_bits(mask, x.shape)
    return MulticoilKSpace(_encode(x, maps, bits), mask)


def adjoint(y, maps):
    """``sum_k conj(S_k) * F^-1(U * y_k)``; ``U`` is ``y.mask`` or the identity."""
    maps = check_sensitivities(maps, y.shape)
    if y.n_coils != maps.shape[0]:
        raise InvalidArgumentError(f"{y.n_coils} coil k-spaces but {maps.shape[0]} sensitivity maps")
    return _decode(y.coils, maps, _mask_bits(y.mask, y.shape))


def rss(coil_images):
    """Root-sum-of-squares coil combination ``sqrt(sum_k |x_k|^2)``.

    Uses the squared magnitudes; the square root of a plain magnitude sum is
    not a root-sum-of-squares.
    """
    if len(coil_images) == 0:
        raise InvalidArgumentError("rss needs at least one coil image")
    stack = np.asarray(coil_images)
    if stack.ndim != 3:
        raise InvalidArgumentError(f"coil images must share one 2D shape, got {stack.shape}")
    return np.sqrt(np.sum(stack.real**2 + stack.imag**2, axis=0))


def _likelihood_inputs(x, y, maps, mask):
    maps = check_sensitivities(maps, y.shape)
    x = _check_shapes(x, maps)
    if y.n_coils != maps.shape[0]:
        raise InvalidArgumentError(f"{y.n_coils} coil k-spaces but {maps.shape[0]} sensitivity maps")
    return x, maps, _mask_bits(mask, y.shape)


def nll(x, y, maps, mask, cfg=NllConfig()):
    """Negative log-likelihood ``(1/sigma^2) sum_k ||U F(S_k x) - y_k||^2``."""
    x, maps, bits = _likelihood_inputs(x, y, maps, mask)
    residual = _encode(x, maps, bits) - y.coils
    return float(np.sum(residual.real**2 + residual.imag**2) / cfg.sigma_sq)


def nll_gradient(x, y, maps, mask, cfg=NllConfig()):
    """``(1/sigma^2) sum_k conj(S_k) F^-1(U (U F(S_k x) - y_k))``.

    This is half the gradient of :func:`nll` with respect to the stacked real and
    imaginary parts of ``x``.
    """
    x, maps, bits = _likelihood_inputs(x, y, maps, mask)
    return _normal_gradient(x, y.coils, maps, bits, cfg.sigma_sq)


def simulate_acquisition(sim, mask=None):
    """Simulate ``y_k = F(S_k x) + e_k`` and subsample it retrospectively.

    Noise is circularly symmetric complex Gaussian with standard deviation
    ``noise_std`` per real component, drawn from PCG64 seeded with
    ``sim.rng_seed``.

    Returns:
        (MulticoilKSpace, ndarray): the masked k-space and the noiseless RSS
        image used as ground truth.
    """
    maps = check_sensitivities(sim.sensitivities)
    phantom = _check_shapes(sim.phantom, maps)
    if mask is None:
        mask = make_full_mask(*phantom.shape)
    coil_images = maps * phantom
    full = fft2c(coil_images)
    if sim.noise_std > 0:
        rng = np.random.Generator(np.random.PCG64(int(sim.rng_seed)))
        noise = rng.standard_normal((2,) + full.shape)
        full = full + sim.noise_std * (noise[0] + 1j * noise[1])
    return apply_mask(mask, MulticoilKSpace(full)), rss(coil_images)

