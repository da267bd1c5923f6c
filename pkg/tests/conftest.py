import pytest

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def record_criterion():
    """Call with ``(label, passed, detail)``; ``passed`` may be None for criteria that did not run."""

    def record(label: str, passed, detail: str) -> None:
        status = "NOT RUN" if passed is None else ("PASS" if passed else "FAIL")
        _ACCEPTANCE.append((label, status, detail))
        print(f"{label}: {status} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{label}: {status} ({detail})")
