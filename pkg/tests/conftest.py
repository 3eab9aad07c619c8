import re
import sys

_RAN: set[int] = set()


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d\d)", report.nodeid)
    if m and report.when == "call":
        _RAN.add(int(m.group(1)))


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    if mod is None or not _RAN:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines(sorted(_RAN)):
        terminalreporter.write_line(line)
