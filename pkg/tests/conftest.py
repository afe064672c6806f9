import numpy as np
import pytest

from hmua.core import HyperCube, SpectralLibrary
from hmua.synth import synthetic_library


def pytest_configure(config):
    np.seterr(all="raise", under="ignore")


@pytest.fixture(scope="session")
def small_library() -> SpectralLibrary:
    return synthetic_library(bands=40, count=24, seed=11)


@pytest.fixture(scope="session")
def full_library() -> SpectralLibrary:
    return synthetic_library(224, 240, 0)


def two_half_cube(rows=10, cols=10, bands=3, split=5, u=None, v=None) -> HyperCube:
    """Left ``split`` columns carry spectrum u, the rest spectrum v."""
    u = np.linspace(0.1, 0.3, bands) if u is None else np.asarray(u, float)
    v = np.linspace(0.9, 0.6, bands) if v is None else np.asarray(v, float)
    img = np.empty((bands, rows, cols))
    img[:, :, :split] = u[:, None, None]
    img[:, :, split:] = v[:, None, None]
    return HyperCube(rows, cols, img.reshape(bands, -1))


def half_textured_cube(size=64, bands=20, period=4, seed=0) -> HyperCube:
    """Uniform left half; right half a checkerboard of two spectra."""
    rng = np.random.default_rng(seed)
    u, v, w = rng.uniform(0.2, 0.8, (3, bands))
    img = np.empty((bands, size, size))
    img[:] = u[:, None, None]
    yy, xx = np.mgrid[0:size, 0:size]
    chk = (yy // period + xx // period) % 2 == 0
    right = xx >= size // 2
    img[:, right & chk] = v[:, None]
    img[:, right & ~chk] = w[:, None]
    return HyperCube(size, size, img.reshape(bands, -1))


# acceptance criteria report one line each; collected here and printed at the end
ACCEPTANCE: dict = {}


def record(number: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
