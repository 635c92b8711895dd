import re

import numpy as np
import pytest
import torch

from scdm.synthetic import MINIATURE_SPEC, generate_coupled

torch.set_num_threads(1)

_CRITERIA: dict[int, list[str]] = {}
_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


@pytest.fixture(scope="session")
def mini():
    """40 coupled miniature trials (EEG 30x1000 at 40 Hz, fNIRS 36x32 at 1.25 Hz)."""
    return generate_coupled(7, 40, MINIATURE_SPEC)


@pytest.fixture(scope="session")
def reference():
    """Reference-shaped fixture: seed 7, 40 trials (EEG 30x4000, fNIRS 36x256)."""
    return generate_coupled(7, 40)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA.setdefault(int(m.group(1)), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok = all(o == "passed" for o in _CRITERIA[k])
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}")
