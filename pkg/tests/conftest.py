import pytest

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    label = getattr(item.function, "criterion", None)
    if label is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        details = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        _ACCEPTANCE[label] = ("PASS" if report.passed else "FAIL", details)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: (not s[0].isdigit(), int(s.split()[0]) if s[0].isdigit() else 0)):
        status, details = _ACCEPTANCE[label]
        line = f"{status}  criterion {label}"
        if details:
            line += f"  [{details}]"
        terminalreporter.write_line(line)
