import pytest

# criterion number -> (passed, description); filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, text: str):
        ACCEPTANCE[number] = (bool(passed), text)
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {text}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, text = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {text}")
