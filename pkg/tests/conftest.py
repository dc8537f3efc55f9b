import pytest

_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
