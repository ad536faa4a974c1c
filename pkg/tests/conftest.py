import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion line for the terminal summary."""
    store = request.config.stash[_RESULTS]

    def record(n: int, ok: bool, detail: str):
        line = f"ACCEPTANCE criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        store[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_RESULTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        terminalreporter.write_line(store[n])
