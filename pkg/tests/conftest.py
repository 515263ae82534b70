import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cncdtv import DirectionField, GeneratorSpec, Image, NoiseSpec, add_noise, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)


@pytest.fixture
def random_field():
    def make(n, alpha_max=4.0, seed=5):
        r = np.random.default_rng(seed)
        return DirectionField(
            alpha=1.0 + r.uniform(0.0, alpha_max - 1.0, n),
            theta=r.uniform(-np.pi / 2, np.pi / 2, n),
        )

    return make


@pytest.fixture
def piecewise_image():
    """32x32 piecewise-constant image with plateaus well inside [0, 1]."""
    g = np.full((32, 32), 0.35)
    g[:, :14] = 0.25
    g[8:22, 10:24] = 0.75
    g[24:30, 4:12] = 0.55
    return Image.from_grid(g)


@pytest.fixture
def noisy_pair(piecewise_image):
    noisy = add_noise(piecewise_image, NoiseSpec(sigma_e=0.1, seed=11))
    return piecewise_image, noisy


@pytest.fixture
def geometric_64():
    clean = generate(GeneratorSpec(kind="geometric", width=64, height=64, seed=7))
    return clean, add_noise(clean, NoiseSpec(sigma_e=0.1, seed=0))
