import numpy as np
import pytest
from hypothesis import settings

from mops.instances import make_tabular, reference_instance

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference():
    inst = reference_instance()
    return inst, inst.model_class()


@pytest.fixture(scope="session")
def small():
    """C=1, S=2, A=2, H=2 with a 4-model class containing the truth."""
    inst = make_tabular(num_contexts=1, num_states=2, num_actions=2, horizon=2, class_size=4,
                        perturbation=0.6, seed=11)
    return inst, inst.model_class()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
