import numpy as np
import pytest

from binremix.harness import synthetic_scene
from binremix.scene import geometry_preset, make_frequency_grid
from binremix.testing import random_scene

_ACCEPTANCE = []


def record_acceptance(number, title, passed, detail):
    _ACCEPTANCE.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section('acceptance criteria')
    for number, title, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f'{"PASS" if passed else "FAIL"} [{number:2d}] {title}: {detail}')


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_scene(rng):
    return random_scene(rng, num_channels=4, num_mics=5, nfft=32)


@pytest.fixture(scope='session')
def grid1024():
    return make_frequency_grid(16000, 1024)


@pytest.fixture(scope='session')
def earpiece_scene(grid1024):
    return synthetic_scene(geometry_preset('earpiece4'), grid1024)
