import numpy as np
import pytest

from gmireg.phantom import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def small_pair():
    """16^3 T1like/T2like phantoms with 4 mm voxels."""
    t1 = generate_phantom(PhantomSpec(size=(16, 16, 16), spacing=(4, 4, 4), seed=5, modality="t1like"))
    t2 = generate_phantom(PhantomSpec(size=(16, 16, 16), spacing=(4, 4, 4), seed=5, modality="t2like"))
    return t1, t2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-run acceptance summary."""

    def record(criterion: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[criterion] = (bool(passed), detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[criterion]
        terminalreporter.write_line(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
