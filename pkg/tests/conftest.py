import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


def criterion_line(name: str, passed: bool, detail: str = "") -> None:
    """One pass/fail line per acceptance criterion (visible with pytest -s)."""
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] {name}" + (f" -- {detail}" if detail else ""), flush=True)
