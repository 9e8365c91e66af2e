"""Shared fixtures.

The degree-4 Dubins certificate is expensive to compute, so module tests use
the stored artifact in ``data/``. Set ``FRSPLAN_CERT`` to test another file.
"""

import os
from pathlib import Path

import pytest

from frsplan.frs import FRSCertificate

ROOT = Path(__file__).resolve().parents[1]
CERT_PATH = Path(os.environ.get("FRSPLAN_CERT", ROOT / "data" / "dubins_deg4.json"))


@pytest.fixture(scope="session")
def dubins_cert():
    if not CERT_PATH.exists():
        pytest.skip(f"certificate {CERT_PATH} not available (run `frsplan compute-frs`)")
    return FRSCertificate.load(CERT_PATH)


# -- acceptance summary ------------------------------------------------------

def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line (printed at the end)."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
