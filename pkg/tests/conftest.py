"""Shared fixtures.

Every Gram certificate recovered while a test runs is copied into a log.
After the test, each logged certificate that passes verify_certificate is
sampled on its claimed set; a certificate that verifies but is violated on
samples fails the test that produced it.
"""

from __future__ import annotations

import copy
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from cbfsos import sos  # noqa: E402

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

SAMPLES = 10_000
SAMPLE_TOL = 1e-6
SAMPLE_BOX = 10.0


class CertificateLog:
    def __init__(self):
        self.pending: list = []
        self.checked = 0
        self.failures: list[str] = []

    def add(self, cert):
        self.pending.append(copy.deepcopy(cert))

    def drain(self) -> list[str]:
        """Sample every pending verified certificate; return new failures."""
        new = []
        for cert in self.pending:
            if not sos.verify_certificate(cert).passed:
                continue
            box = SAMPLE_BOX / cert.coordinate_scale
            for c in cert.constraints:
                ok, worst, used = sos.sampling_check(c, n_samples=SAMPLES, box=box, tol=SAMPLE_TOL)
                if not ok:
                    new.append(f"{c.name}: worst normalized value {worst:.3g} over {used} samples")
            self.checked += 1
        self.pending = []
        self.failures += new
        return new


_LOG = CertificateLog()


@pytest.fixture(scope="session", autouse=True)
def _record_certificates():
    original = sos.recover

    def recording(prog, sol):
        cert = original(prog, sol)
        _LOG.add(cert)
        return cert

    sos.recover = recording
    yield _LOG
    sos.recover = original


@pytest.fixture(autouse=True)
def _sample_new_certificates(_record_certificates):
    yield
    failures = _record_certificates.drain()
    assert not failures, "certificate violated on samples: " + "; ".join(failures)


@pytest.fixture
def certificate_log(_record_certificates) -> CertificateLog:
    return _record_certificates


# acceptance reporting

ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_collection_modifyitems(config, items):
    # the certificate sweep has to see every certificate, so it runs last
    last = [it for it in items if it.get_closest_marker("after_everything")]
    items[:] = [it for it in items if it not in last] + last


def pytest_configure(config):
    config.addinivalue_line("markers", "after_everything: run once all other tests are done")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
