"""Shared test hooks: collect release-gate verdicts and echo them in the
terminal summary, where pytest's output capture cannot swallow them."""

_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _VERDICTS:
        terminalreporter.section("release gate verdicts")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
