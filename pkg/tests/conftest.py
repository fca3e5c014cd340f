import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_labels(rng, shape, p=(0.55, 0.15, 0.15, 0.15)):
    return rng.choice(4, size=shape, p=p).astype(np.uint8)


def blob(shape, center, radius):
    g = np.indices(shape, dtype=np.float64)
    d2 = sum((g[i] - center[i]) ** 2 for i in range(3))
    return d2 <= radius**2


# -- acceptance criteria summary -------------------------------------------------------
# Tests marked ``acceptance(n, title)`` report one PASS/FAIL line per criterion at the
# end of the session, whatever the capture mode.

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seconds": 0.0})
    entry["ok"] = entry["ok"] and rep.passed
    entry["seconds"] += rep.duration


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {number:2d}: {e['title']} ({e['seconds']:.2f} s)")
