"""Shared fixtures: small geometries and networks that keep the suite fast"""

import numpy as np
import pytest

from acind.grids import AcVector, Rng
from acind.inr import FourierEmbedding, HeadMode, MlpParams, NetworkConfig
from acind.phantom import barbapapa_like_phantom
from acind.projector import ScanGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def geom16():
    return ScanGeometry.parallel(16, 16, 8)


@pytest.fixture
def geom8():
    return ScanGeometry.parallel(8, 8, 4)


@pytest.fixture
def tiny_network():
    return NetworkConfig(num_frequencies=8, hidden_width=16, hidden_layers=2)


@pytest.fixture
def tiny_field():
    """Embedding, 16-16-16-3 distribution head (T = 0.5) and an AC vector"""
    seeded = Rng(7)
    emb = FourierEmbedding.create(8, seeded)
    params = MlpParams.initialize([16, 16, 16, 3], seeded, HeadMode.DISTRIBUTION, 0.5)
    return emb, params, AcVector([0.2, 0.9, 1.7])


@pytest.fixture
def barbapapa16():
    return barbapapa_like_phantom(16, 16)
