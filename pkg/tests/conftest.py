import numpy as np
import pytest

from subitizer.embodiment import default_motor_table


def rel_err(a, b, floor=1e-8):
    """Elementwise |a - b| / max(|a|, |b|), floored so exact zeros compare absolutely."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_difference(loss, array, index, step=1e-5):
    """Central difference of ``loss()`` w.r.t. ``array[index]`` (restores the entry)."""
    orig = array[index]
    array[index] = orig + step
    up = loss()
    array[index] = orig - step
    down = loss()
    array[index] = orig
    return (up - down) / (2 * step)


@pytest.fixture(scope="session")
def table():
    return default_motor_table()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
