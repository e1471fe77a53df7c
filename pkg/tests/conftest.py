import time

import pytest

from gecal.simulation import StudyConfig, run_study


@pytest.fixture(scope="session")
def paper_studies():
    """Default 1000-replication studies of both models, run once per session.

    Maps the model name to ``(MetricsTable, seconds)``.
    """
    out = {}
    for model in ("model1", "model2"):
        t0 = time.perf_counter()
        table = run_study(StudyConfig(model=model))
        out[model] = (table, time.perf_counter() - t0)
    return out


# -- one summary line per acceptance criterion -------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _CRITERIA[num] = (text, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        text, status = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {status}  {text}")
