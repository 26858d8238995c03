from __future__ import annotations

import numpy as np
import pytest

from backstep.core import ScalarField1D, make_uniform_grid

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Append one PASS/FAIL line per acceptance criterion, shown in the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str, seconds: float | None = None) -> None:
        tag = "PASS" if ok else "FAIL"
        took = f" [{seconds:.2f}s]" if seconds is not None else ""
        line = f"criterion {number:2d} {tag}: {title}: {detail}{took}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


def random_smooth_field(rng: np.random.Generator, terms: int = 4):
    """A random trigonometric polynomial, returned as a callable so it can be sampled on any grid."""
    a = rng.normal(size=terms)
    b = rng.normal(size=terms)
    k = np.arange(1, terms + 1)

    def fn(x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(a * np.cos(k * np.pi * x) + b * np.sin(k * np.pi * x), axis=-1)

    return fn


@pytest.fixture
def grid101():
    return make_uniform_grid(101)


def sample(grid, fn) -> ScalarField1D:
    return ScalarField1D(grid, fn(grid.nodes))
