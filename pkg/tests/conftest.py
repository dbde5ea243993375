import numpy as np
import pytest

from misstmle.core import RngStream, study_dataset
from misstmle.learners import LearnerSpec


@pytest.fixture
def rng():
    return RngStream(991)


def small_library():
    """Cheap two-member library for simulation-heavy tests."""
    return (LearnerSpec("mean"), LearnerSpec("glm"))


def toy_study_matrix(n: int, seed: int, missing_y: float = 0.0, missing_x: float = 0.0,
                     missing_z: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Small A,Z1..Z5,X,Y table with optional MCAR holes."""
    gen = np.random.default_rng(seed)
    a = gen.standard_normal(n)
    z = (gen.random((n, 5)) < np.array([0.3, 0.25, 0.5, 0.4, 0.35])).astype(float)
    x = (gen.random(n) < 1.0 / (1.0 + np.exp(-(-1.2 + z @ np.full(5, 0.5))))).astype(float)
    y = 0.2 * x + z @ np.full(5, 0.4) + gen.standard_normal(n)
    values = np.column_stack([a, z, x, y])
    mask = np.zeros_like(values, dtype=bool)
    for rate, col in ((missing_z, 2), (missing_z, 3), (missing_z, 4), (missing_x, 6), (missing_y, 7)):
        if rate > 0:
            mask[:, col] = gen.random(n) < rate
    return values, mask


def toy_dataset(n: int, seed: int, **rates):
    values, mask = toy_study_matrix(n, seed, **rates)
    return study_dataset(values, mask)
