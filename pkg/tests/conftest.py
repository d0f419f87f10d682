import numpy as np
import pytest

from sepcontrol import CostSpec, SystemModel, build_grid

# Acceptance verdicts collected during the run and echoed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {verdict}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def scalar_benchmark():
    """The scalar benchmark: unstable plant, independent process and sensor noise."""
    model = SystemModel(A=[[0.5]], B1=[[1.0]], B2=[[1.0, 0.0]], C=[[1.0]], D=[[0.0, 0.5]],
                        x0_mean=[0.0], x0_cov=[[1.0]])
    cost = CostSpec(Q=[[1.0]], R=[[1.0]], S=[[1.0]])
    return model, cost


@pytest.fixture
def scalar():
    return scalar_benchmark()


@pytest.fixture
def two_state():
    model = SystemModel(A=[[0.0, 1.0], [-1.0, -0.3]], B1=[[0.0], [1.0]],
                        B2=[[0.3, 0.0, 0.0], [0.0, 0.5, 0.0]], C=[[1.0, 0.0]], D=[[0.0, 0.1, 0.4]],
                        x0_mean=[1.0, 0.0], x0_cov=np.diag([0.2, 0.1]))
    cost = CostSpec(Q=np.eye(2), R=[[0.5]], S=np.eye(2))
    return model, cost


@pytest.fixture
def grid100():
    return build_grid(1.0, 100)
