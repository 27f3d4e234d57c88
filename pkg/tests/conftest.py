import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            num, title = mark.args
            _criteria[num] = {"title": title, "outcome": "NOT RUN", "detail": ""}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if not mark:
        return
    entry = _criteria[mark.args[0]]
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        entry["outcome"], entry["detail"] = "FAIL", detail or str(rep.longrepr).splitlines()[-1][:160]
    elif rep.when == "call" and rep.passed:
        entry["outcome"], entry["detail"] = "PASS", detail


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        line = f"[{e['outcome']}] {num}. {e['title']}"
        if e["detail"]:
            line += f" -- {e['detail']}"
        terminalreporter.write_line(line)
