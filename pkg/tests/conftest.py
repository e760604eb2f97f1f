import numpy as np
import pytest

from bgwatermark.sysmodel import SystemModel, random_system, solve_dare

ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str) -> str:
    line = f"[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def scalar_model():
    return SystemModel(
        np.array([[0.9]]), np.array([[1.0]]), np.array([[1.0]]),
        np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]),
    )


@pytest.fixture
def small_model():
    return random_system(3, 2, 2, rng=np.random.default_rng(7))


@pytest.fixture
def small_kalman(small_model):
    return solve_dare(small_model)
