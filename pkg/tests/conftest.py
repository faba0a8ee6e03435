import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def ar1(p, rho):
    i = np.arange(p)
    return rho ** np.abs(i[:, None] - i[None, :])


def random_corr(p, rng, extra=3):
    A = rng.standard_normal((p, p + extra))
    S = A @ A.T
    d = np.sqrt(np.diag(S))
    R = S / d[:, None] / d[None, :]
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def random_spd(p, rng, shift=0.3):
    B = rng.standard_normal((p, p + 2))
    return B @ B.T / p + shift * np.eye(p)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo runs (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance summary: one PASS/FAIL line per criterion, repeated at the end of the run
ACCEPTANCE: list = []


def record(num: int, name: str, ok: bool, detail: str, elapsed: float) -> str:
    line = f"CRITERION {num:2d} {'PASS' if ok else 'FAIL'} | {name} | {detail} | {elapsed:.1f}s"
    ACCEPTANCE.append((num, line))
    print(line, flush=True)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
