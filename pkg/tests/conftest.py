import re
from collections import defaultdict

_CRITERIA = defaultdict(list)
_NAME = re.compile(r"test_criterion_(\d+)_")


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if m:
        _CRITERIA[int(m.group(1))].append((report.nodeid.split("::")[-1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        runs = _CRITERIA[k]
        ok = all(outcome == "passed" for _, outcome, _ in runs)
        secs = sum(d for _, _, d in runs)
        names = ", ".join(sorted({name for name, _, _ in runs}))
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  ({secs:.1f} s)  {names}")
