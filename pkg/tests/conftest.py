from __future__ import annotations

import pytest

from clinskill.ehr.cohort import CohortSpec, generate_cohort


@pytest.fixture(scope="session")
def small_store():
    return generate_cohort(CohortSpec(n_stays=20, seed=11))


@pytest.fixture(scope="session")
def store50():
    return generate_cohort(CohortSpec(n_stays=50, seed=7))


_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    if rep.failed or (rep.when == "call" and n not in _ACCEPTANCE):
        _ACCEPTANCE[n] = ("PASS" if rep.passed else "FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
