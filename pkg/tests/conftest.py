import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""
    results = request.config.stash.setdefault(_RESULTS, [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}"
        results.append((number, line))
        print(line)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, [])
    if results:
        terminalreporter.section("acceptance")
        for _, line in sorted(results):
            terminalreporter.write_line(line)
