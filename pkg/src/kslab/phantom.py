"""Modified Shepp-Logan phantom and randomized variants for synthetic volumes."""

from __future__ import annotations

import math

import numpy as np

from kslab.errors import InvalidArgumentError

# Columns: intensity, semi-axis a (x), semi-axis b (y), center x, center y, rotation (degrees).
MODIFIED_SHEPP_LOGAN = np.array(
    [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
        [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
        [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
        [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
        [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
        [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
        [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
        [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
        [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
    ]
)


def pixel_coordinates(height, width):
    """Normalized coordinates in [-1, 1]: x grows to the right, y grows upward."""
    x = (np.arange(width) - (width - 1) / 2) / ((width - 1) / 2)
    y = ((height - 1) / 2 - np.arange(height)) / ((height - 1) / 2)
    return np.meshgrid(x, y)


def ellipse_inside(x, y, ellipse):
    _, a, b, x0, y0, phi = ellipse
    phi = math.radians(phi)
    dx, dy = x - x0, y - y0
    u = dx * math.cos(phi) + dy * math.sin(phi)
    v = -dx * math.sin(phi) + dy * math.cos(phi)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def shepp_logan_phantom(height, width, ellipses=None):
    """Sum of ellipse intensities on a height x width grid, clamped to [0, 1].

    Args:
        height, width: grid size, each at least 16.
        ellipses: (n, 6) parameter table; defaults to :data:`MODIFIED_SHEPP_LOGAN`.
    """
    if height < 16 or width < 16:
        raise InvalidArgumentError(f"phantom needs at least 16x16 pixels, got {height}x{width}")
    table = MODIFIED_SHEPP_LOGAN if ellipses is None else np.asarray(ellipses, dtype=float)
    x, y = pixel_coordinates(height, width)
    image = np.zeros((height, width))
    for ellipse in table:
        image[ellipse_inside(x, y, ellipse)] += ellipse[0]
    return np.clip(image, 0.0, 1.0)


def perturbed_ellipses(rng, slice_position=0.0, strength=1.0):
    """Randomly perturbed copy of the modified Shepp-Logan table.

    Every ellipse gets jittered center, axes, rotation and (for the inner
    structures) intensity. ``slice_position`` in [-1, 1] shrinks the inner
    structures smoothly, so consecutive slices of one volume stay coherent.
    """
    table = MODIFIED_SHEPP_LOGAN.copy()
    n = len(table)
    scale = 1.0 + strength * rng.uniform(-0.08, 0.08, size=(n, 2))
    shift = strength * rng.uniform(-0.03, 0.03, size=(n, 2))
    rotation = strength * rng.uniform(-8.0, 8.0, size=n)
    intensity = 1.0 + strength * rng.uniform(-0.25, 0.25, size=n)
    # The skull and the brain matter keep their nesting: only global scaling applies there.
    shared = 1.0 + strength * rng.uniform(-0.06, 0.06)
    taper = 1.0 - 0.25 * slice_position**2
    table[:2, 1:3] *= shared
    table[:2, 4] *= shared
    table[2:, 1:3] *= scale[2:] * taper
    table[2:, 3:5] += shift[2:]
    table[2:, 4] += 0.08 * slice_position
    table[2:, 5] += rotation[2:]
    table[2:, 0] *= intensity[2:]
    return table
