import numpy as np
import pytest

from lptm import _backend


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w, c=3):
    return rng.uniform(0.0, 1.0, (h, w, c))


@pytest.fixture(params=_backend.available())
def backend(request):
    previous = _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(previous)


# ----------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per numbered criterion
# ----------------------------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("measured", "")
    if rep.failed and not detail:
        detail = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else ""
    results = item.config.stash.setdefault(_ACCEPTANCE, {})
    if rep.when == "call" or rep.failed:
        results[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        verdict, title, detail = results[number]
        terminalreporter.write_line(f"[{verdict}] {number:2d}. {title}: {detail}")
