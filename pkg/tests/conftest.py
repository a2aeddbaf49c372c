import numpy as np
import pytest

from meo.checks import random_bank, random_gate
from meo.tensor_core import Rng

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""
    def _report(criterion: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def layer_parts():
    """Factory for a seeded (bank, gate, x) triple."""
    def make(n=4, d_in=5, d_out=3, s=6, activation="identity", seed=0):
        bank = random_bank(n, d_in, d_out, activation, seed)
        gate = random_gate(d_in, n, seed + 2)
        x = Rng(seed + 3).normal((s, d_in))
        return bank, gate, x
    return make


def max_abs(a, b) -> float:
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())
