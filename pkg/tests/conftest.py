import warnings

import numpy as np
import pytest

from radscat.grid import UnderResolvedWarning, make_grid


@pytest.fixture(autouse=True)
def _quiet_resolution_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderResolvedWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid256():
    return make_grid(256, 40.0)


def gaussian_r(grid, center=0.0, width=1.0, momentum=0.0):
    """u = r psi for a (possibly boosted, shifted) gaussian psi."""
    r = grid.nodes
    vals = r * np.exp(-0.5 * ((r - center) / width) ** 2) * np.exp(1j * momentum * r)
    return grid.wavefunction(vals)


# acceptance lines collected during the run and echoed after the test summary
ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_record(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    records = config.stash.get(ACCEPTANCE, [])
    if not records:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in records:
        terminalreporter.write_line(line)
    by_criterion = {}
    for criterion, line in records:
        by_criterion.setdefault(criterion, []).append(line)
    terminalreporter.write_line("")
    for criterion in sorted(by_criterion, key=int):
        lines = by_criterion[criterion]
        failed = [ln.split("] ", 1)[1].split(":", 1)[0] for ln in lines if ln.startswith("[FAIL]")]
        verdict = "FAIL" if failed else "PASS"
        detail = f" (failing: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {criterion}: {verdict}{detail}")
