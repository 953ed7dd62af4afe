import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from safestab import SamplingPlan, build_planar_example, build_random_polynomial_scenario


@pytest.fixture(scope="session")
def planar():
    return build_planar_example()


@pytest.fixture(scope="session")
def random_poly():
    return build_random_polynomial_scenario(7)


@pytest.fixture(scope="session")
def small_plan():
    return SamplingPlan(grid_resolution=41, random_samples=500, boundary_samples=256, seed=0)


@pytest.fixture(scope="session")
def full_plan():
    return SamplingPlan(grid_resolution=81, random_samples=2000, boundary_samples=512, seed=0)


def sample_safe_states(scenario, count, seed, min_norm=0.0):
    """Seeded rejection sampling of the safe set inside the working box."""
    rng = np.random.default_rng(seed)
    lo = scenario.working_region[:, 0]
    hi = scenario.working_region[:, 1]
    out = []
    while len(out) < count:
        batch = lo + (hi - lo) * rng.random((2 * count, scenario.state_dim))
        for x in batch:
            if scenario.cbf.value(x) >= 0.0 and np.linalg.norm(x) >= min_norm:
                out.append(x)
                if len(out) == count:
                    break
    return out
