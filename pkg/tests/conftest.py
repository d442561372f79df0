"""Shared fixtures: deterministic weight/embedding generators.

Fixture parameters are regenerated per session from pinned Philox
streams instead of being committed as binaries; the same seeds always
produce bit-identical arrays.
"""

import numpy as np
import pytest

from magcrop.fusion import ProjectionWeights
from magcrop.granularity import ClassifierWeights

SEED_CLASSIFIER = 101
SEED_EMBEDDING = 102
SEED_PROJECTION = 103
SEED_TOKEN = 104


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@pytest.fixture(scope="session")
def classifier_weights() -> ClassifierWeights:
    rng = philox(SEED_CLASSIFIER)
    return ClassifierWeights(
        W1=rng.standard_normal((256, 768)) / np.sqrt(768),
        b1=rng.standard_normal(256) * 0.1,
        W2=rng.standard_normal((128, 256)) / np.sqrt(256),
        b2=rng.standard_normal(128) * 0.1,
        W3=rng.standard_normal((3, 128)) / np.sqrt(128),
        b3=rng.standard_normal(3) * 0.1,
    )


@pytest.fixture(scope="session")
def fixture_embedding() -> np.ndarray:
    return philox(SEED_EMBEDDING).standard_normal(768)


@pytest.fixture(scope="session")
def projection_weights() -> ProjectionWeights:
    rng = philox(SEED_PROJECTION)
    hidden = 1024
    return ProjectionWeights(
        W1=rng.standard_normal((hidden, 4096)) / np.sqrt(4096),
        b1=rng.standard_normal(hidden) * 0.1,
        W2=rng.standard_normal((256, hidden)) / np.sqrt(hidden),
        b2=rng.standard_normal(256) * 0.1,
    )


@pytest.fixture(scope="session")
def fixture_token() -> np.ndarray:
    return philox(SEED_TOKEN).standard_normal(4096)
