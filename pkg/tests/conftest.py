import numpy as np
import pytest

from edgecal.graph import CausalDag


def make_dag(num_nodes, edges, coef=1.0, variance=1.0):
    """DAG with every coefficient ``coef`` (or a per-edge dict) and equal noise variances."""
    edges = tuple(tuple(e) for e in edges)
    coefs = coef if isinstance(coef, dict) else {e: coef for e in edges}
    return CausalDag(num_nodes, edges, coefs, np.full(num_nodes, float(variance)))


@pytest.fixture
def chain():
    return make_dag(3, [(0, 1), (1, 2)], coef=0.8)


@pytest.fixture
def collider():
    return make_dag(3, [(0, 1), (2, 1)], coef=0.8)


ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    """Remember one acceptance line; printed together in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
