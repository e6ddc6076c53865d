import numpy as np
import pytest
from hypothesis import strategies as st

from specproj.linalg import make_symmetric


@pytest.fixture
def diag211():
    return make_symmetric(np.diag([2.0, 1.0, 1.0]))


def random_orthogonal(rng, p):
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def random_multicluster(rng, k_max=4, m_max=3):
    """Covariance with 2..k_max well separated clusters in a random basis."""
    k = int(rng.integers(2, k_max + 1))
    mus = np.sort(rng.choice(np.arange(1, 20), size=k, replace=False).astype(float))[::-1] / 4
    mults = rng.integers(1, m_max + 1, size=k)
    diag = np.repeat(mus, mults)
    q = random_orthogonal(rng, diag.size)
    return make_symmetric((q * diag) @ q.T), mus, mults


seeds = st.integers(min_value=0, max_value=2**32 - 1)


class AcceptanceReport:
    """One PASS/FAIL line per acceptance criterion, merged over its parts."""

    def __init__(self):
        self.parts = {}

    def record(self, number, title, ok, detail=""):
        self.parts.setdefault(number, []).append((title, bool(ok), detail))

    def lines(self):
        for number in sorted(self.parts):
            parts = self.parts[number]
            status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
            body = "; ".join(f"{t}: {'ok' if ok else 'FAILED'} {d}".rstrip() for t, ok, d in parts)
            yield f"criterion {number}: {status}  {body}"


_REPORT = AcceptanceReport()


@pytest.fixture(scope="session")
def acceptance_report():
    return _REPORT


def pytest_terminal_summary(terminalreporter):
    lines = list(_REPORT.lines())
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
