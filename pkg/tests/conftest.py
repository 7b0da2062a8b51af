import pytest

# criterion name -> (outcome, detail) collected from tests marked ``criterion``
_RESULTS: dict[str, list] = {}
_DETAILS: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion line of the current test."""
    marker = request.node.get_closest_marker("criterion")
    name = marker.args[0] if marker else request.node.name

    def add(text: str):
        _DETAILS.setdefault(name, []).append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _RESULTS.setdefault(marker.args[0], []).append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, outcomes in _RESULTS.items():
        ok = all(o == "passed" for o in outcomes)
        status = "PASS" if ok else ("SKIP" if all(o == "skipped" for o in outcomes) else "FAIL")
        detail = "; ".join(_DETAILS.get(name, []))
        tr.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
