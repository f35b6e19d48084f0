import numpy as np
import pytest
from hypothesis import settings

from adapterx.config import ExperimentConfig
from adapterx.data import SyntheticTask, make_task

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_cfg():
    return ExperimentConfig().validate()


@pytest.fixture(scope="session")
def toy_data(toy_cfg):
    return make_task(SyntheticTask.from_config(toy_cfg))



_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "notes": []})
    if report.failed:
        entry["ok"] = False
        msg = str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash") else str(report.longrepr)
        entry["notes"].append(f"{item.name}: {msg.splitlines()[0]}")
    elif report.skipped and report.when == "call":
        entry["ok"] = False
        entry["notes"].append(f"{item.name}: skipped")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        tr.write_line(f"criterion {n:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}")
        for note in e["notes"]:
            tr.write_line(f"              {note}")
