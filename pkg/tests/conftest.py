import pytest

from drift_spectra import acceptance

_RESULTS: list = []


@pytest.fixture(scope="session")
def acceptance_results():
    """Run the full acceptance battery once per session."""
    if not _RESULTS:
        _RESULTS.extend(acceptance.run_acceptance())
    return {r.number: r for r in _RESULTS}


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for r in _RESULTS:
        terminalreporter.write_line(acceptance.format_result(r))
    passed = sum(r.passed for r in _RESULTS)
    terminalreporter.write_line(f"{passed}/{len(_RESULTS)} criteria passed")
