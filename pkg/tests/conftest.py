import numpy as np
import pytest
from hypothesis import settings

from degradenet.clustering import AUDIT
from degradenet.dataset import SyntheticSpec, generate_synthetic_cohort

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic_cohort(SyntheticSpec(n_participants=120, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_sessionfinish(session, exitstatus):
    # every Lloyd run anywhere in the suite must have had non-increasing inertia
    if AUDIT.violations:
        session.exitstatus = 1
        print(f"\nLloyd monotonicity violated in {len(AUDIT.violations)} iteration(s) "
              f"over {AUDIT.runs} runs: {AUDIT.violations[:5]}")
