import numpy as np
import pytest

from kpmatch.geometry import CameraIntrinsics, Pose, so3_exp


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0, max_angle))


def random_pose(rng, max_angle=np.pi, max_t=2.0):
    return Pose(random_rotation(rng, max_angle), rng.uniform(-max_t, max_t, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Callable recording one criterion outcome for the end-of-run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        lines.append((number, f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
