import numpy as np
import pytest

from lassosse.model import LtiSystem, build_stacked_model, generate_random_instance, simulate

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def three_sensors(alpha=1.0):
    """Static scalar plant observed by three identical sensors."""
    return build_stacked_model(LtiSystem([[1.0]], alpha * np.ones((3, 1))), 1)


@pytest.fixture
def small_instance():
    sys, x0, scenario = generate_random_instance(3, 5, 1, 2, seed=12)
    model = build_stacked_model(sys, 2)
    traj = simulate(sys, x0, scenario, 2)
    y, a, x = traj.window(0, 2)
    return model, y, a, x
