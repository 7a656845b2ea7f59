"""Compressed-sensing MRI laboratory: masks, multicoil forward models, MAP and RIM
reconstruction, and image-quality metrics for comparing rectilinear and radial
k-space subsampling."""

from kslab.errors import (
    InfeasibleAccelerationError,
    InvalidArgumentError,
    InvalidMaskError,
    KslabError,
    NumericalDivergenceError,
    TensorFormatError,
)
from kslab.fft import fft2c, ifft2c

__version__ = "0.1.0"

__all__ = [
    "InfeasibleAccelerationError",
    "InvalidArgumentError",
    "InvalidMaskError",
    "KslabError",
    "NumericalDivergenceError",
    "TensorFormatError",
    "fft2c",
    "ifft2c",
]
