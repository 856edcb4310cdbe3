import numpy as np
import pytest
from hypothesis import settings

from taskdecomp.model import Box, LinearDynamics, Subtask, Task, TransitionSpec

# fixed example sequence, so a run is reproducible
settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {num} ({name}): {detail}")


def double_integrator(dt=1.0):
    return LinearDynamics(np.array([[1.0, dt], [0.0, 1.0]]), np.array([[0.0], [dt]]))


def di_subtask(label=1, xlo=(-10, -10), xhi=(10, 10), u=2.0, G=None, g=None, existential=True):
    G = np.array([[-1.0, 0.0]]) if G is None else G
    g = np.array([-100.0]) if g is None else g
    return Subtask(double_integrator(), Box(list(xlo), list(xhi)), Box([-u], [u]),
                   TransitionSpec(G, g, existential), label=label)


@pytest.fixture(scope="session")
def trained():
    """Default scenario training (five orderings, bootstrap plus five ILMPC runs each)."""
    from taskdecomp.experiment import Scenario, train
    s = Scenario()
    return s, train(s)
