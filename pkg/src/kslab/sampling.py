"""Retrospective k-space subsampling masks.

Two generators are provided: a rectilinear scheme that keeps a central band of
phase-encoding columns plus randomly drawn columns, and a CIRCUS-style radial
scheme that rasterizes golden-angle spokes onto the Cartesian grid around a
fully sampled calibration disk. Masks are deterministic given
``(shape, target_R, seed)``; randomness comes from numpy's PCG64 generator.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from kslab.errors import InfeasibleAccelerationError, InvalidArgumentError, InvalidMaskError

GOLDEN_ANGLE = math.pi / ((1 + math.sqrt(5)) / 2)  # 111.246 degrees
RADIAL_ACS_RADIUS = 8.0
ACCELERATION_TOLERANCE = 0.05

__all__ = [
    "AcsRegion",
    "GOLDEN_ANGLE",
    "SamplingMask",
    "Scheme",
    "achieved_acceleration",
    "apply_mask",
    "center_fraction",
    "extract_acs",
    "make_full_mask",
    "make_mask",
    "make_radial_mask",
    "make_rectilinear_mask",
    "mask_rng",
]


class Scheme(str, enum.Enum):
    RECTILINEAR = "rectilinear"
    RADIAL = "radial"
    FULL = "full"


@dataclass(frozen=True)
class AcsRegion:
    """Autocalibration region descriptor.

    ``kind == "columns"`` describes the full-height column band ``[start, stop)``;
    ``kind == "disk"`` describes every grid point within ``radius`` of the
    k-space center ``(height // 2, width // 2)``.
    """

    kind: str
    start: int = 0
    stop: int = 0
    radius: float = 0.0

    def to_bits(self, shape):
        height, width = shape
        bits = np.zeros(shape, dtype=np.uint8)
        if self.kind == "columns":
            bits[:, self.start : self.stop] = 1
        elif self.kind == "disk":
            bits[_disk(height, width, self.radius)] = 1
        else:
            raise InvalidMaskError(f"unknown ACS region kind {self.kind!r}")
        return bits


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Binary subsampling mask ``U`` with its generation metadata.

    Attributes:
        bits: uint8 array of shape (height, width); 1 marks a sampled point.
        scheme: generator family.
        target_acceleration: acceleration requested from the generator.
        acs: calibration region, fully contained in ``bits``.
    """

    bits: np.ndarray
    scheme: Scheme
    target_acceleration: float
    acs: AcsRegion | None

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise InvalidMaskError(f"mask must be 2D, got shape {bits.shape}")
        if np.any(bits > 1):
            raise InvalidMaskError("mask entries must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    @property
    def shape(self):
        return self.bits.shape

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def n_sampled(self):
        return int(self.bits.sum(dtype=np.int64))

    def acs_bits(self):
        if self.acs is None:
            raise InvalidMaskError("mask carries no ACS region")
        return self.acs.to_bits(self.shape)

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return (
            self.scheme == other.scheme
            and self.target_acceleration == other.target_acceleration
            and self.acs == other.acs
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None


def mask_rng(seed):
    """Return the generator used for every mask draw: PCG64 seeded with ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InvalidArgumentError(f"mask seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def achieved_acceleration(mask):
    """Acceleration ``R = N*M / sum(U)`` of a mask (or a raw bit array)."""
    bits = mask.bits if isinstance(mask, SamplingMask) else np.asarray(mask)
    n_ones = int(np.count_nonzero(bits))
    if n_ones == 0:
        raise InvalidMaskError("mask has no sampled points")
    return float(Fraction(bits.size, n_ones))


def center_fraction(target_r):
    """Fraction of central columns kept by the rectilinear scheme.

    10% at R=5 and 5% at R=10, and ``0.5 / R`` for any other acceleration
    (which coincides with both named cases).
    """
    target_r = Fraction(target_r).limit_denominator(10**6)
    if target_r == 5:
        return Fraction(1, 10)
    if target_r == 10:
        return Fraction(1, 20)
    return Fraction(1, 2) / target_r


def _column_band(width, n_cols):
    # Even widths follow [w/2 - ceil(b/2), w/2 + floor(b/2)); odd widths center the band on w // 2.
    center = width // 2
    if width % 2 == 0:
        start = center - (n_cols + 1) // 2
    else:
        start = center - n_cols // 2
    start = min(max(start, 0), width - n_cols)
    return start, start + n_cols


def make_full_mask(height, width):
    """All-ones mask; its ACS region is the whole grid."""
    _check_dims(height, width)
    return SamplingMask(
        bits=np.ones((height, width), dtype=np.uint8),
        scheme=Scheme.FULL,
        target_acceleration=1.0,
        acs=AcsRegion("columns", 0, width),
    )


def make_rectilinear_mask(height, width, target_r, seed):
    """Column-wise random mask with a fully sampled central column band.

    The central ``ceil(f * width)`` columns are always kept (see
    :func:`center_fraction`), then columns are drawn uniformly without
    replacement until the acceleration first drops to ``target_r`` or below.

    Args:
        height: number of rows (readout direction).
        width: number of phase-encoding columns, at least 8.
        target_r: target acceleration, at least 1.
        seed: 64-bit seed or a ``numpy.random.Generator``.

    Returns:
        SamplingMask: columns are constant along rows; ``acs`` is the column band.

    Raises:
        InvalidArgumentError: ``target_r < 1`` or ``width < 8``.
        InfeasibleAccelerationError: the central band alone exceeds the budget.
    """
    _check_dims(height, width)
    if width < 8:
        raise InvalidArgumentError(f"rectilinear masks need width >= 8, got {width}")
    if not target_r >= 1:
        raise InvalidArgumentError(f"target acceleration must be >= 1, got {target_r}")
    rng = mask_rng(seed)
    r = Fraction(target_r).limit_denominator(10**6)

    n_acs = max(1, math.ceil(center_fraction(r) * width))
    if n_acs > width or Fraction(width, n_acs) < r:
        raise InfeasibleAccelerationError(
            f"central band of {n_acs} columns already exceeds the budget for R={float(r)} "
            f"at width {width}",
            nearest_acceleration=float(Fraction(width, min(n_acs, width))),
        )
    start, stop = _column_band(width, n_acs)
    chosen = np.zeros(width, dtype=bool)
    chosen[start:stop] = True

    n_needed = math.ceil(Fraction(width) / r)
    candidates = np.flatnonzero(~chosen)
    order = rng.permutation(candidates)
    chosen[order[: max(0, n_needed - n_acs)]] = True

    bits = np.broadcast_to(chosen[None, :], (height, width)).astype(np.uint8)
    return SamplingMask(bits, Scheme.RECTILINEAR, float(target_r), AcsRegion("columns", start, stop))


def _disk(height, width, radius):
    rows = np.arange(height)[:, None] - height // 2
    cols = np.arange(width)[None, :] - width // 2
    return rows * rows + cols * cols <= radius * radius


def _spoke_pixels(height, width, angle):
    """Rasterize the full line through the k-space center at ``angle``.

    One pixel per step along the dominant axis, so the chain is 8-connected and
    runs edge to edge. Returns (rows, cols, offset) with ``offset`` the signed
    step index from the center, used to trim spokes symmetrically.
    """
    cy, cx = height // 2, width // 2
    dy, dx = math.sin(angle), math.cos(angle)
    if abs(dx) >= abs(dy):
        cols = np.arange(width)
        offset = cols - cx
        rows = np.rint(cy + offset * (dy / dx)).astype(np.int64)
    else:
        rows = np.arange(height)
        offset = rows - cy
        cols = np.rint(cx + offset * (dx / dy)).astype(np.int64)
    keep = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    return rows[keep], cols[keep], offset[keep]


def _within_tolerance(n_total, n_ones, target_r):
    return abs(n_total / n_ones - target_r) <= ACCELERATION_TOLERANCE * target_r


def make_radial_mask(height, width, target_r, seed):
    """CIRCUS-style radial mask on the Cartesian grid.

    The mask is the union of a disk of radius 8 around the k-space center and
    straight spokes through the center, rasterized onto the grid. Spoke angles
    advance by the golden angle from a seed-dependent start. Spokes are added
    until the acceleration falls within 5% of ``target_r``. When a whole spoke
    would jump over that window, the last spoke is shortened symmetrically
    about the center to land on the target count.

    Raises:
        InvalidArgumentError: ``min(height, width) < 16`` or ``target_r < 1``.
        InfeasibleAccelerationError: the calibration disk alone is too dense,
            or the grid saturates before the target is reached.
    """
    _check_dims(height, width)
    if min(height, width) < 16:
        raise InvalidArgumentError(f"radial masks need min(height, width) >= 16, got {height}x{width}")
    if not target_r >= 1:
        raise InvalidArgumentError(f"target acceleration must be >= 1, got {target_r}")
    rng = mask_rng(seed)
    n_total = height * width
    target_count = n_total / target_r

    acs = AcsRegion("disk", radius=RADIAL_ACS_RADIUS)
    bits = acs.to_bits((height, width)).astype(bool)
    n_ones = int(bits.sum())
    if _within_tolerance(n_total, n_ones, target_r):
        return SamplingMask(bits.astype(np.uint8), Scheme.RADIAL, float(target_r), acs)
    if n_ones > target_count:
        raise InfeasibleAccelerationError(
            f"calibration disk alone gives R={n_total / n_ones:.3f}, below target {target_r}",
            nearest_acceleration=n_total / n_ones,
        )

    start_angle = rng.uniform(0.0, math.pi)
    max_spokes = 4 * (height + width)
    for k in range(max_spokes):
        rows, cols, offset = _spoke_pixels(height, width, start_angle + k * GOLDEN_ANGLE)
        new = ~bits[rows, cols]
        n_new = int(new.sum())
        if n_new == 0:
            continue
        if n_ones + n_new <= target_count or _within_tolerance(n_total, n_ones + n_new, target_r):
            bits[rows, cols] = True
            n_ones += n_new
            if _within_tolerance(n_total, n_ones, target_r):
                return SamplingMask(bits.astype(np.uint8), Scheme.RADIAL, float(target_r), acs)
            continue
        # A whole spoke overshoots the window: keep its central part only.
        rows, cols, offset = rows[new], cols[new], offset[new]
        order = np.lexsort((offset < 0, np.abs(offset)))
        n_take = int(round(target_count)) - n_ones
        bits[rows[order[:n_take]], cols[order[:n_take]]] = True
        n_ones += n_take
        if _within_tolerance(n_total, n_ones, target_r):
            return SamplingMask(bits.astype(np.uint8), Scheme.RADIAL, float(target_r), acs)
        break
    raise InfeasibleAccelerationError(
        f"no radial mask within 5% of R={target_r} on a {height}x{width} grid",
        nearest_acceleration=n_total / n_ones,
    )


def make_mask(scheme, height, width, target_r, seed):
    """Dispatch to the generator for ``scheme``; ``target_r == 1`` yields a full mask
    for the radial scheme as well."""
    scheme = Scheme(scheme)
    if scheme is Scheme.FULL:
        return make_full_mask(height, width)
    if scheme is Scheme.RECTILINEAR:
        return make_rectilinear_mask(height, width, target_r, seed)
    if target_r == 1:
        full = make_full_mask(height, width)
        return dataclasses.replace(full, scheme=Scheme.RADIAL, acs=AcsRegion("disk", radius=RADIAL_ACS_RADIUS))
    return make_radial_mask(height, width, target_r, seed)


def extract_acs(mask):
    """Mask whose ones are exactly the calibration region of ``mask``."""
    if mask.acs is None:
        raise InvalidMaskError("mask carries no ACS region")
    bits = mask.acs.to_bits(mask.shape)
    if not bits.any():
        raise InvalidMaskError("ACS region is empty")
    return SamplingMask(bits, mask.scheme, achieved_acceleration(bits), mask.acs)


def apply_mask(mask, ksp):
    """Zero every coil's k-space off the mask; the result carries ``mask``."""
    coils = np.asarray(ksp.coils)
    if coils.shape[-2:] != mask.shape:
        raise InvalidArgumentError(f"mask shape {mask.shape} does not match k-space shape {coils.shape[-2:]}")
    return dataclasses.replace(ksp, coils=coils * mask.bits, mask=mask)


def _check_dims(height, width):
    if int(height) < 1 or int(width) < 1:
        raise InvalidArgumentError(f"grid dimensions must be positive, got {height}x{width}")
