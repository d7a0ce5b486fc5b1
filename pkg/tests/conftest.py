import numpy as np
import pytest

from rmtequiv.model import ModelSpec

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(label: str, ok: bool, detail: str = ""):
        _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
        print(_ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_spec(rng: np.random.Generator, N: int, n: int, rank: int | None = None,
                a_scale: float = 1.0) -> ModelSpec:
    d = rng.uniform(0.3, 2.0, N)
    dt = rng.uniform(0.3, 2.0, n)
    if rank == 0:
        A = np.zeros((N, n))
    else:
        r = min(N, n) if rank is None else rank
        A = (rng.standard_normal((N, r)) + 1j * rng.standard_normal((N, r))) @ (
            rng.standard_normal((r, n)) + 1j * rng.standard_normal((r, n)))
        A *= a_scale / np.linalg.norm(A, 2)
    return ModelSpec(N, n, d, dt, A)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def mp_spec():
    return ModelSpec.marchenko_pastur(4)
