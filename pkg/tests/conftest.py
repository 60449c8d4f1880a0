import tempfile
from pathlib import Path

import pytest

from evofarm.server.httpd import ServerApp, ServerHandle

REPO_ROOT = Path(__file__).resolve().parent.parent


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE {outcome}] {name}", flush=True)


@pytest.fixture
def server():
    """A quiet in-process server on an ephemeral port."""
    tmp = tempfile.mkdtemp(prefix="evofarm-test-")
    handle = ServerHandle(ServerApp(journal_dir=Path(tmp)))
    yield handle
    handle.close()
