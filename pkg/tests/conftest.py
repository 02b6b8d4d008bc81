import numpy as np
import pytest

# acceptance bookkeeping: criterion number -> (title, passed, notes)
_CRITERIA: dict[int, list] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240518)


@pytest.fixture
def note(request):
    """Attach a diagnostic line to the current criterion's summary."""
    m = request.node.get_closest_marker("criterion")
    notes = _CRITERIA.setdefault(m.args[0], [m.args[1], None, []])[2] if m else []
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None or not (rep.when == "call" or rep.failed):
        return
    entry = _CRITERIA.setdefault(m.args[0], [m.args[1], None, []])
    entry[1] = rep.passed if entry[1] is None else entry[1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, passed, notes = _CRITERIA[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {title}")
        for line in notes:
            tr.write_line(f"              {line}")
