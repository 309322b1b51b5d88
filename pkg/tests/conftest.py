import numpy as np
import pytest
from hypothesis import settings

from simplexobs.fem import solve_eigen
from simplexobs.geometry import named_simplex, standard_simplex
from simplexobs.studies import system_at

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def half_square():
    return named_simplex("half-square-pi")


@pytest.fixture(scope="session")
def hs_system_5(half_square):
    return system_at(half_square, 5)


@pytest.fixture(scope="session")
def hs_basis_5(hs_system_5):
    return solve_eigen(hs_system_5, 12)


@pytest.fixture(scope="session")
def std2_system_3():
    return system_at(standard_simplex(2), 3)


@pytest.fixture(scope="session")
def std2_full_basis_3(std2_system_3):
    return solve_eigen(std2_system_3, std2_system_3.n_dofs, method="dense")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record(criterion: int, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
