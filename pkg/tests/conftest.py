import pytest

# one summary line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = getattr(item.function, "criterion", None)
    if crit and rep.when == "call" and rep.failed and crit not in ACCEPTANCE:
        ACCEPTANCE[crit] = (False, f"raised {call.excinfo.typename}: {call.excinfo.value}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[crit]
        terminalreporter.write_line(f"{crit} {'PASS' if passed else 'FAIL'}  {detail}")
