import numpy as np
import pytest
from hypothesis import settings

from oispec.core import IlluminationGeometry, SpectralStack, WavelengthGrid

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_stack(n_angles=3, n_wl=4, h=6, w=5, frame="reflectance", seed=0, **kw):
    r = np.random.default_rng(seed)
    grid = WavelengthGrid(500.0, 10.0, n_wl)
    geom = IlluminationGeometry(50.0, tuple(360.0 * i / n_angles for i in range(n_angles)))
    values = r.uniform(0.05, 1.0, (n_angles, n_wl, h, w))
    return SpectralStack(grid, geom, values, frame=frame, **kw)


@pytest.fixture
def small_stack():
    return make_stack()


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")
