import os

import hypothesis
import numpy as np
import pytest

from src.simulation.evolution import UnitaryMatrix, evolve_unitary

from .oracles import haar_unitary

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def coupler() -> UnitaryMatrix:
    """Two coupled waveguides at the 50:50 length."""
    return evolve_unitary(np.array([[0.0, 1.0], [1.0, 0.0]]), np.pi / 4)


@pytest.fixture
def haar9() -> UnitaryMatrix:
    return UnitaryMatrix(entries=haar_unitary(9, np.random.default_rng(2024)))


@pytest.fixture
def grid_config() -> dict:
    return {
        "lattice": {
            "geometry": {"kind": "grid2d", "rows": 3, "cols": 3, "spacing": 1.0},
            "c0": 1.0,
            "d0": 0.5,
            "length": 1.2,
        },
        "source": {"inputPair": [1, 9], "indistinguishability": 1.0, "coherenceTime": 1.0},
        "detection": {"nPairs": 20000, "seed": 7},
        "task": {"kind": "corr"},
    }
