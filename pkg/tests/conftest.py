import numpy as np
import pytest

from finrank.simulate import BasisSpec, ProcessSpec


@pytest.fixture
def rank2_process():
    return ProcessSpec(kind="FINITE_RANK", basis=BasisSpec("COSINE", 5), score_variances=[1.0, 0.5])


@pytest.fixture
def brownian():
    return ProcessSpec(kind="BROWNIAN")


def bm_eigenvalues(L):
    l = np.arange(1, L + 1)
    return 1.0 / ((l - 0.5) ** 2 * np.pi**2)


ACCEPTANCE_RESULTS: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_RESULTS[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
