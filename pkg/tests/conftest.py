import pytest


def pytest_configure(config):
    config._acceptance_log = {}


@pytest.fixture
def acceptance_log(request):
    return request.config._acceptance_log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = getattr(config, "_acceptance_log", {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        name, ok, detail = log[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {name}: {detail}")
    passed = sum(ok for _, ok, _ in log.values())
    terminalreporter.write_line(f"{passed}/{len(log)} criteria pass")
