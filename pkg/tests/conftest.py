import pytest

CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion for the end-of-run report."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        prev = CRITERIA.get(number)
        if prev is not None:
            ok = ok and prev[1]
            detail = f"{prev[2]}; {detail}" if prev[2] else detail
        CRITERIA[number] = (title, bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok, detail = CRITERIA[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {title}: {detail}")
