import pytest

CRITERIA = {
    1: "gradient exactness",
    2: "kernel and diffusion operator invariants",
    3: "potential distances",
    4: "SMACOF stress",
    5: "persistence matches Betti oracle",
    6: "total persistence",
    7: "J&R sanity",
    8: "sampling budgets",
    9: "trajectory preservation",
    10: "sampler comparison study",
    11: "persistence vs generalization",
    12: "determinism",
}

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


def _store(config):
    return config.stash.setdefault(_RESULTS, {})


@pytest.fixture
def criterion(request):
    """``criterion(ok, detail, soft=None)`` records the line for the test's criterion marker.

    ``soft`` is an optional ``(ok, detail)`` pair that is reported but does
    not decide pass or fail.
    """
    n = request.node.get_closest_marker("criterion").args[0]

    def record(ok, detail, soft=None):
        _store(request.config)[n] = (bool(ok), detail, soft)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.failed:
        store = _store(item.config)
        n = marker.args[0]
        if n not in store:
            store[n] = (False, f"raised {call.excinfo.typename}: {call.excinfo.value}" if call.excinfo else
                        "failed", None)
        elif store[n][0]:
            store[n] = (False, store[n][1] + " (a later assertion failed)", store[n][2])


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_RESULTS, None)
    if not store:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, name in CRITERIA.items():
        if n not in store:
            terminalreporter.write_line(f"#{n:<2} NOT RUN  {name}")
            continue
        ok, detail, soft = store[n]
        terminalreporter.write_line(f"#{n:<2} {'PASS' if ok else 'FAIL'}     {name}: {detail}")
        if soft is not None:
            s_ok, s_detail = soft
            terminalreporter.write_line(f"    {'soft PASS' if s_ok else 'soft FAIL'} (reported only): {s_detail}")
