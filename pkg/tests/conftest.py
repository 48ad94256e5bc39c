import math

import numpy as np
import pytest

from kslab.spectral_core import Grid, SpectralField


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_real_field(grid: Grid, rng, n_modes: int = 12, kmax: int | None = None) -> SpectralField:
    """Random real trigonometric polynomial with modes inside the dealias cutoff."""
    kmax = kmax if kmax is not None else max(1, min(grid.n) // 3 - 1)
    x = np.broadcast_arrays(*grid.nodes())
    f = np.zeros(grid.shape)
    for _ in range(n_modes):
        m = rng.integers(-kmax, kmax + 1, size=grid.d)
        ph = rng.uniform(0, 2 * math.pi)
        arg = sum(2 * math.pi * m[j] * x[j] / grid.L for j in range(grid.d))
        f = f + rng.normal() * np.cos(arg + ph)
    return SpectralField.from_physical(grid, f)
