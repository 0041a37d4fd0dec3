import dataclasses

import pytest

from labsync.simulator import session_params, simulate


@pytest.fixture(scope="session")
def mislabeled_gait(tmp_path_factory):
    """Gait session on disk whose second annotation carries the wrong label."""
    out = tmp_path_factory.mktemp("gait_mislabeled")
    params = session_params("gait", seed=4)
    params = dataclasses.replace(params, mislabel=1)
    manifest, truth = simulate(params, out)
    return manifest, truth


_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, passed, detail)``."""
    results = request.config.stash.setdefault(_RESULTS, [])

    def record(number, title, passed, detail):
        results.append(f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title} | {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
