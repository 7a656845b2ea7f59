"""Centered, orthonormal 2D discrete Fourier transforms.

Zero frequency sits at index ``n // 2`` along each axis for both even and odd
sizes, and both directions carry a ``1/sqrt(N*M)`` factor so the pair is
unitary. Transforms act on the last two axes, so coil stacks and batches are
handled without loops.
"""

import numpy as np

from kslab.errors import InvalidArgumentError

_AXES = (-2, -1)


def _check(x):
    x = np.asarray(x)
    if x.ndim < 2:
        raise InvalidArgumentError(f"expected at least a 2D array, got shape {x.shape}")
    if x.shape[-2] == 0 or x.shape[-1] == 0:
        raise InvalidArgumentError(f"zero-sized image dimension in shape {x.shape}")
    return x


def fft2c(img):
    """Centered orthonormal forward 2D DFT over the last two axes."""
    img = _check(img)
    shifted = np.fft.ifftshift(img, axes=_AXES)
    return np.fft.fftshift(np.fft.fft2(shifted, axes=_AXES, norm="ortho"), axes=_AXES)


def ifft2c(ksp):
    """Centered orthonormal inverse 2D DFT, the exact inverse of :func:`fft2c`."""
    ksp = _check(ksp)
    shifted = np.fft.ifftshift(ksp, axes=_AXES)
    return np.fft.fftshift(np.fft.ifft2(shifted, axes=_AXES, norm="ortho"), axes=_AXES)
