import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


def random_transform(rng, max_translation=0.05, max_angle=np.pi):
    from kfpose.geometry import from_axis_angle

    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    t = rng.uniform(-max_translation, max_translation, 3)
    return from_axis_angle(axis, angle, t)
