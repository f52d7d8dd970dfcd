import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tan.data import SplitMaskWarning
from tan.synth import SynthConfig, generate_sequence

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_video():
    """Short 224x224 synthetic sequence with full ground truth."""
    return generate_sequence(SynthConfig(dims=(224, 224), n_frames=6, half_width=22, length=75, seed=5), name="small")


@pytest.fixture(scope="session")
def default_video():
    return generate_sequence(SynthConfig(n_frames=10, seed=3), name="default")


@pytest.fixture(autouse=True)
def _quiet_split_masks():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SplitMaskWarning)
        yield


def textured(h, w, seed=0, sigma=2.0):
    """Smooth random texture in [0, 1]."""
    from scipy import ndimage
    r = np.random.default_rng(seed).random((h, w))
    t = ndimage.gaussian_filter(r, sigma)
    t -= t.min()
    return t / t.max()


def star_polygon(rng, n=None, center=(60.0, 60.0), rmin=15.0, rmax=40.0):
    """Random simple (star-shaped) polygon, positively oriented."""
    n = n or int(rng.integers(5, 16))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    ang += np.linspace(0, 1e-3, n)  # keep angles distinct
    r = rng.uniform(rmin, rmax, n)
    return np.column_stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)])


def square(cx, cy, half):
    return np.array([[cx - half, cy - half], [cx + half, cy - half], [cx + half, cy + half], [cx - half, cy + half]], float)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
