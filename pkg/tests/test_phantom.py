import numpy as np
import pytest

from kslab.errors import InvalidArgumentError
from kslab.phantom import MODIFIED_SHEPP_LOGAN, perturbed_ellipses, pixel_coordinates, shepp_logan_phantom


def test_default_phantom_values():
    img = shepp_logan_phantom(128, 128)
    assert img.shape == (128, 128)
    assert img.min() == 0.0 and img.max() == 1.0
    # outer skull ring is 1.0, brain tissue 0.2
    assert img[64, 21] == pytest.approx(1.0)
    assert img[64, 64] == pytest.approx(0.2)
    assert img[0, 0] == 0.0


def test_coordinates_span_unit_square():
    x, y = pixel_coordinates(5, 7)
    assert x[0, 0] == -1 and x[0, -1] == 1
    assert y[0, 0] == 1 and y[-1, 0] == -1


def test_perturbations_are_seeded_and_bounded():
    a = perturbed_ellipses(np.random.Generator(np.random.PCG64(3)), 0.2)
    b = perturbed_ellipses(np.random.Generator(np.random.PCG64(3)), 0.2)
    c = perturbed_ellipses(np.random.Generator(np.random.PCG64(4)), 0.2)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == MODIFIED_SHEPP_LOGAN.shape
    img = shepp_logan_phantom(64, 64, a)
    assert 0 <= img.min() and img.max() <= 1


def test_slice_position_changes_the_anatomy():
    rng_a = np.random.Generator(np.random.PCG64(0))
    rng_b = np.random.Generator(np.random.PCG64(0))
    top = shepp_logan_phantom(64, 64, perturbed_ellipses(rng_a, -0.6))
    mid = shepp_logan_phantom(64, 64, perturbed_ellipses(rng_b, 0.0))
    assert np.count_nonzero(top != mid) > 20


def test_too_small():
    with pytest.raises(InvalidArgumentError):
        shepp_logan_phantom(15, 64)
