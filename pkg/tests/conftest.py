import pytest

_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k, title): acceptance criterion number k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        k, title = mark.args
        detail = dict(item.user_properties).get("detail", "")
        _OUTCOMES[k] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_OUTCOMES):
        title, ok, detail = _OUTCOMES[k]
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {title}"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)
