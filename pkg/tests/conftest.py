import numpy as np
import pytest

from editpipe import flow_engine as fe
from editpipe.synth import shift_wrapped, textured_image


def make_textured_pair(size: int, dx: int, dy: int, seed: int):
    """A textured image and its integer-shifted copy (wrapping)."""
    base = textured_image(size, size, np.random.default_rng(seed))
    return fe.Image(base), fe.Image(shift_wrapped(base, dx, dy))


def interior_slice(shape, margin: int):
    h, w = shape
    return np.s_[margin:h - margin, margin:w - margin]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


@pytest.fixture(scope="session")
def shift_cases():
    """20 textured 256x256 pairs with integer shifts |u|,|v| <= 8."""
    cases = []
    rng = np.random.default_rng(2024)
    for i in range(20):
        dx = int(rng.integers(-8, 9))
        dy = int(rng.integers(-8, 9))
        if dx == 0 and dy == 0:
            dx = 3
        src, tgt = make_textured_pair(256, dx, dy, seed=5000 + i)
        cases.append((src, tgt, dx, dy))
    return cases
