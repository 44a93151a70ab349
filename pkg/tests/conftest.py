from __future__ import annotations

import numpy as np
import pytest

from nlbvp.convolutions import Field
from nlbvp.geometry import Domain


def poly_field(c0: float, c1: float, c2: float, c3: float = 0.0) -> Field:
    """``c0 + c1 x + c2 x^2 + c3 x^3`` on the line with exact derivatives."""
    return Field.closed(
        lambda X: c0 + c1 * X[:, 0] + c2 * X[:, 0] ** 2 + c3 * X[:, 0] ** 3,
        lambda X: c1 + 2 * c2 * X + 3 * c3 * X**2,
        lambda X: (2 * c2 + 6 * c3 * X)[:, :, None],
        dim=1,
    )


def sin_field(k: float = np.pi, amp: float = 1.0) -> Field:
    return Field.closed(
        lambda X: amp * np.sin(k * X[:, 0]),
        lambda X: amp * k * np.cos(k * X),
        lambda X: (-amp * k * k * np.sin(k * X))[:, :, None],
        dim=1,
    )


@pytest.fixture
def unit_interval() -> Domain:
    return Domain.interval(0.0, 1.0)


@pytest.fixture
def unit_square() -> Domain:
    return Domain.rectangle(0.0, 0.0, 1.0, 1.0)


CRITERIA: dict[int, str] = {}


@pytest.fixture
def record():
    """Store a one-line verdict for the acceptance summary."""

    def _record(n: int, ok: bool, detail: str) -> bool:
        CRITERIA[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(CRITERIA[n])
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
