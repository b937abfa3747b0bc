import pytest

# acceptance outcomes by criterion name, from tests marked with @pytest.mark.criterion
RESULTS: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_addoption(parser):
    parser.addoption("--extended", action="store_true", help="run the extended reproduction tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--extended"):
        return
    skip = pytest.mark.skip(reason="extended run; pass --extended")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, f"rep_{rep.when}", rep)
    marker = item.get_closest_marker("criterion")
    if marker and rep.skipped:
        RESULTS[marker.args[0]] = ("SKIP", item.nodeid)
    elif marker and rep.when == "call":
        RESULTS[marker.args[0]] = ("PASS" if rep.passed else "FAIL", item.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS, key=lambda s: int(s.split(".")[0])):
        status, node = RESULTS[name]
        terminalreporter.write_line(f"{status}  {name}")
