import numpy as np
import pytest
from hypothesis import settings

from wgmodes.materials import MaterialMap
from wgmodes.mesh import generate_rect_mesh
from wgmodes.modes import solve_modes

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

OMEGA = 6.5


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    results = item.config._criteria.setdefault(number, {"title": title, "ok": True, "seen": False})
    if rep.when == "call":
        results["seen"] = True
    if rep.failed or (rep.when == "call" and rep.skipped):
        results["ok"] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        r = criteria[number]
        status = "PASS" if r["ok"] and r["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {r['title']}")


@pytest.fixture(scope="session")
def rect_meshes():
    """The (1, 0.5) rectangle at h = 1/8, 1/16, 1/32."""
    return {n: generate_rect_mesh(1.0, 0.5, n, n // 2) for n in (8, 16, 32)}


@pytest.fixture(scope="session")
def solved(rect_meshes):
    """Mode sets at omega = 6.5: 12 and 20 modes on every acceptance mesh."""
    out = {}
    for n, mesh in rect_meshes.items():
        mats = MaterialMap.uniform(mesh)
        for k in (12, 20):
            out[n, k] = solve_modes(mesh, mats, OMEGA, k)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
