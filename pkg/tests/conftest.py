import pytest

_LINES: list[str] = []


@pytest.fixture
def report_line():
    def record(text: str) -> None:
        _LINES.append(text)
        print(text)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance")
        for line in _LINES:
            terminalreporter.write_line(line)
