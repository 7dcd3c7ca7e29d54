import os
import sys

# must precede the first numba import so determinism tests can use >1 thread
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

sys.path.insert(0, os.path.dirname(__file__))

import pytest  # noqa: E402

from splatloc.pose import look_at  # noqa: E402
from splatloc.renderer import Camera  # noqa: E402
from splatloc.scene import SyntheticSpec, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_scene():
    return generate_synthetic(SyntheticSpec(count=60, extent=1.0, scale_range=(0.05, 0.2), seed=3))


@pytest.fixture(scope="session")
def small_cam():
    return Camera.from_fov(32, 24, 60)


@pytest.fixture(scope="session")
def view_pose():
    return look_at([0.6, -0.4, -3.0])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
