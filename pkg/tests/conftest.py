"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}


class CriterionRecorder:
    def __call__(self, number: int, passed: bool, detail: str) -> None:
        prev = _VERDICTS.get(number)
        if prev is not None:  # a criterion split over several tests passes only if all parts do
            passed = passed and prev[0]
            detail = f"{prev[1]}; {detail}"
        _VERDICTS[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")


@pytest.fixture(scope="session")
def criterion():
    return CriterionRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        passed, detail = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
