import numpy as np
import pytest

from fdneus.core import CameraView, seeded_rng
from fdneus.scene import NoiseSpec, camera_orbit, render_bundle, sphere_room, table_lamp_room


def simple_camera(f=100.0, c=50.0, size=101):
    K = np.array([[f, 0, c], [0, f, c], [0, 0, 1.0]])
    return CameraView(K=K, R=np.eye(3), t=np.zeros(3), width=size, height=size)


@pytest.fixture(scope="session")
def sphere_scene():
    return sphere_room()


@pytest.fixture(scope="session")
def room_scene():
    return table_lamp_room()


@pytest.fixture(scope="session")
def sphere_bundles(sphere_scene):
    views = camera_orbit(sphere_scene, 6, seed=3, width=48, height=36)
    return [render_bundle(sphere_scene, v, NoiseSpec(), seeded_rng(0, i)) for i, v in enumerate(views)]


@pytest.fixture(scope="session")
def room_bundles(room_scene):
    views = camera_orbit(room_scene, 6, seed=1, width=48, height=36)
    return [render_bundle(room_scene, v, NoiseSpec(), seeded_rng(0, i)) for i, v in enumerate(views)]


# -- acceptance summary ------------------------------------------------------------
# Acceptance tests carry @pytest.mark.criterion(n) and may attach a "detail"
# string through record_property; one PASS/FAIL line per criterion is printed
# at session end.

_ACCEPTANCE: dict = {}


@pytest.fixture(autouse=True)
def _criterion_tag(request):
    mark = request.node.get_closest_marker("criterion")
    if mark is not None:
        request.node.user_properties.append(("criterion", mark.args[0]))
    yield


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props or (report.when != "call" and not report.failed):
        return
    key = props["criterion"]
    ok = report.passed and _ACCEPTANCE.get(key, (True, ""))[0]
    detail = props.get("detail", "") if report.when == "call" else f"{report.when} error"
    _ACCEPTANCE[key] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
