"""Prints a one-line verdict per acceptance criterion at the end of the run."""

_verdicts: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        detail = ""
        for key, value in report.user_properties:
            if key == "detail":
                detail = value
        _verdicts[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name, (verdict, detail) in sorted(_verdicts.items()):
        terminalreporter.write_line(f"{verdict}  {name}  {detail}")
