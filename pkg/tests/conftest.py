import numpy as np
import pytest

from kslab.forward import MulticoilKSpace, simulate_sensitivities
from kslab.sampling import apply_mask, make_mask


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_instance(rng, height=24, width=20, n_coils=3, scheme="rectilinear", r=3.0):
    """Random image, unit-norm maps, a mask and masked random k-space data."""
    x = random_complex(rng, (height, width))
    maps = random_complex(rng, (n_coils, height, width))
    mask = make_mask(scheme, height, width, r, int(rng.integers(2**32)))
    y = apply_mask(mask, MulticoilKSpace(random_complex(rng, (n_coils, height, width))))
    return x, maps, mask, y


def smooth_maps(height, width, n_coils):
    return simulate_sensitivities(height, width, n_coils)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, passed, detail)`` returns ``passed``."""

    def record(name, passed, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
