from __future__ import annotations

import os

import pytest
import torch

torch.set_num_threads(int(os.environ.get("MOLMECH_THREADS", "1")))


@pytest.fixture(scope="session")
def small_corpus() -> list[str]:
    from molmech.smiles.generate import generate_corpus

    return generate_corpus(2000, max_atoms=20, seed=11)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion; printed at the end of the session."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
